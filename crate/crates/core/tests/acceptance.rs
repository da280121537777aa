//! End-to-end checks of the pipeline's headline behaviors.
//!
//! Each test prints a one-line `criterion <name>: pass` / `FAIL` verdict so
//! a full run doubles as a release checklist (`cargo test --test acceptance
//! -- --nocapture`). Workloads and tolerances are pinned as constants at
//! the top of the file; loosening one is a semantic change, not tuning.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use adwise_core::bench::{run_bench, run_one_traced, BenchPolicy, BenchmarkSpec};
use adwise_core::explorer::{
    explore, ExplorationTrace, ExploreOptions, StepPhase, TerminationReason,
};
use adwise_core::geometry::Rect;
use adwise_core::kb::{retrieve_top_k, Embedder, HashEmbedder, KbEntry, KnowledgeBase};
use adwise_core::metrics::score_session;
use adwise_core::model::{
    parse_app_model, AppModel, InvocationId, WidgetId, WindowId, WindowKind,
};
use adwise_core::policy::{Action, MockPolicy, HISTORY_CAPACITY};
use adwise_core::regulation::{
    check_oversized, run_all, RegulationConfig, RuleId, Scanner, StubScanner,
    MALVERTISING_ENGINE_THRESHOLD, OVERSIZED_RATIO_DEN, OVERSIZED_RATIO_NUM,
};
use adwise_core::sim::{
    AdContent, AdInventoryItem, InterstitialMoment, InterstitialSpec, SimConfig, TriggerLog,
    TriggerRecord,
};
use adwise_core::static_ads::{default_registry, identify_ad_widgets, AdCategory, AdEvidence};
use adwise_core::wtg::{build_wtg, shortest_distances, EventKind, Trigger, Wtg, WtgEdge};

// ---- pinned workloads and tolerances ---------------------------------------

/// Wall-clock ceiling for the whole static-analysis fixture pass.
const STATIC_BUDGET: Duration = Duration::from_secs(1);
/// Seeded graphs checked against the exhaustive path oracle.
const GRAPH_CASES: u64 = 100;
/// Node ceiling that keeps exhaustive path enumeration tractable.
const GRAPH_MAX_NODES: usize = 8;
/// Seeded knowledge bases checked against the exhaustive retrieval scan.
const KB_CASES: u64 = 50;
const KB_MAX_ENTRIES: usize = 1000;
const KB_DIM: usize = 256;
const RETRIEVAL_KS: [usize; 3] = [1, 3, 5];
/// Sessions checked for soundness invariants, per policy.
const SOUNDNESS_SEEDS: u64 = 100;
/// Seeds of one efficacy comparison.
const EFFICACY_SEEDS: usize = 20;
/// Minimum mean detection-rate lead of guided over random exploration.
const GUIDED_GAP_MIN: f64 = 0.15;
/// Wall-clock ceiling for one efficacy comparison.
const EFFICACY_BUDGET: Duration = Duration::from_secs(60);
/// Absolute tolerance when comparing metric values.
const METRIC_EPS: f64 = 1e-9;

// ---- harness ---------------------------------------------------------------

/// Runs the body and prints the one-line verdict; a failure still panics so
/// `cargo test` reports it.
fn criterion<F: FnOnce()>(name: &str, body: F) {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(()) => println!("criterion {name}: pass"),
        Err(cause) => {
            println!("criterion {name}: FAIL");
            resume_unwind(cause);
        }
    }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn load_model(name: &str) -> AppModel {
    let bytes = std::fs::read(fixture(name)).expect("fixture is readable");
    parse_app_model(&bytes).expect("fixture parses")
}

/// The benchmark family used by the efficacy and ablation comparisons:
/// twenty seeded eight-window apps, one finding per ad category, a quarter
/// of the transitions broken at runtime, forty steps of budget.
fn efficacy_spec() -> BenchmarkSpec {
    BenchmarkSpec {
        seed: 0,
        num_seeds: EFFICACY_SEEDS,
        num_windows: 8,
        edge_density: 0.15,
        findings_per_category: 1,
        infeasible_fraction: 0.25,
        max_step: 40,
    }
}

/// Replays the bounded action history over the explore-phase steps and
/// asserts no click recorded as failed is repeated while still inside the
/// history window.
fn assert_no_failed_click_repeats(trace: &ExplorationTrace) {
    let mut recent: VecDeque<(Action, bool)> = VecDeque::new();
    for step in trace.steps.iter().filter(|s| s.phase == StepPhase::Explore) {
        if matches!(step.action, Action::Click { .. }) {
            assert!(
                !recent.iter().any(|(action, failed)| *failed && action == &step.action),
                "failed action {} repeated within the history window",
                step.action
            );
        }
        if recent.len() == HISTORY_CAPACITY {
            recent.pop_front();
        }
        recent.push_back((step.action.clone(), step.marked_failed));
    }
}

/// Structural invariants every session trace must satisfy.
fn assert_trace_invariants(trace: &ExplorationTrace, max_step: usize) {
    let explore_count = trace.steps.iter().filter(|s| s.phase == StepPhase::Explore).count();
    assert_eq!(explore_count, trace.explore_steps, "explore-step accounting");
    assert!(trace.explore_steps <= max_step, "budget respected");
    match trace.termination {
        TerminationReason::AllTriggered => {
            assert!(trace.remaining_findings.is_empty(), "nothing remains after a full sweep");
        }
        TerminationReason::BudgetExhausted => {
            assert_eq!(trace.explore_steps, max_step, "exhaustion means the budget was spent");
            assert!(!trace.remaining_findings.is_empty(), "exhaustion leaves findings behind");
        }
        _ => {}
    }
    for pair in trace.steps.windows(2) {
        assert_eq!(
            pair[1].window_before, pair[0].window_after,
            "consecutive steps share a state"
        );
        assert!(pair[1].t > pair[0].t, "logical time advances with every action");
    }
    for step in &trace.steps {
        match step.phase {
            StepPhase::Trigger => {
                assert!(!step.marked_failed, "reflection only judges explore steps");
            }
            StepPhase::Explore => {
                assert_eq!(
                    step.marked_failed, !step.state_changed,
                    "offline reflection flags exactly the no-effect actions"
                );
            }
        }
    }
    for pair in trace.log.records.windows(2) {
        assert!(pair[0].t <= pair[1].t, "trigger log is time-ordered");
    }
    for record in &trace.log.records {
        assert!(record.t >= trace.log.t_start, "records never predate the session");
    }
    assert_no_failed_click_repeats(trace);
}

// ---- static identification -------------------------------------------------

#[test]
fn static_rules_match_fixture_snippets() {
    criterion("static-rules-match-fixture-snippets", || {
        let started = Instant::now();
        let registry = default_registry();

        let model = load_model("three_snippets.json");
        let findings = identify_ad_widgets(&model, &registry).expect("analysis succeeds");
        let summary: Vec<(&str, &str, AdCategory)> = findings
            .iter()
            .map(|f| (f.window_id.as_str(), f.widget_id.as_str(), f.category))
            .collect();
        assert_eq!(
            summary,
            vec![
                ("w_ringtone", "adView", AdCategory::Adview),
                ("w_game", "b1", AdCategory::Popup),
                ("w_options", "apps", AdCategory::Native),
            ],
            "one finding per snippet, each under its own rule"
        );
        match &findings[0].evidence {
            AdEvidence::ViewClass { library, view_class } => {
                assert_eq!(library, "AdMob");
                assert_eq!(view_class, "com.google.android.gms.ads.AdView");
            }
            other => panic!("adview evidence should be the cast view class, got {other:?}"),
        }
        match &findings[1].evidence {
            AdEvidence::ShowApi { invocation_id, target, .. } => {
                assert_eq!(invocation_id.as_str(), "i_show_interstitial");
                assert!(target.ends_with("InterstitialAd.show"));
            }
            other => panic!("popup evidence should be the show invocation, got {other:?}"),
        }
        match &findings[2].evidence {
            AdEvidence::Intent { invocation_id, uri } => {
                assert_eq!(invocation_id.as_str(), "i_developer_page");
                assert!(uri.contains("play.google.com"));
            }
            other => panic!("native evidence should be the store intent, got {other:?}"),
        }

        let benign = load_model("benign_20.json");
        let widget_count: usize = benign.windows.iter().map(|w| w.layout.widgets.len()).sum();
        assert_eq!(widget_count, 20, "the benign fixture holds exactly twenty widgets");
        let clean = identify_ad_widgets(&benign, &registry).expect("analysis succeeds");
        assert!(clean.is_empty(), "no benign widget is flagged: {clean:?}");

        let elapsed = started.elapsed();
        assert!(elapsed < STATIC_BUDGET, "static pass took {elapsed:?}");
    });
}

// ---- graph guidance --------------------------------------------------------

/// Random graph of at most [`GRAPH_MAX_NODES`] windows, with occasional
/// parallel edges and a mix of widget-level and window-level triggers.
fn random_graph(rng: &mut ChaCha8Rng) -> Wtg {
    let n = rng.random_range(2..=GRAPH_MAX_NODES);
    let ids: Vec<WindowId> = (0..n).map(|i| WindowId::new(format!("w{i}"))).collect();
    let mut wtg = Wtg {
        nodes: ids.iter().map(|w| (w.clone(), WindowKind::Activity)).collect(),
        edges: Vec::new(),
        trigger_map: BTreeMap::new(),
        warnings: Vec::new(),
    };
    let mut serial = 0usize;
    for source in 0..n {
        for target in 0..n {
            if source == target {
                continue;
            }
            let copies = match rng.random_range(0..10u32) {
                0 | 1 => 1,
                2 => 2, // parallel edges exercise the edge-id tie rule
                _ => 0,
            };
            for _ in 0..copies {
                let edge_id = InvocationId::new(format!("e{serial:03}"));
                let trigger = if rng.random_bool(0.8) {
                    Trigger::Widget {
                        widget_id: WidgetId::new(format!("btn{serial:03}")),
                        event: EventKind::Click,
                    }
                } else {
                    Trigger::WindowLevel
                };
                wtg.edges.push(WtgEdge {
                    source: ids[source].clone(),
                    target: ids[target].clone(),
                    edge_id: edge_id.clone(),
                });
                wtg.trigger_map.insert(edge_id, trigger);
                serial += 1;
            }
        }
    }
    wtg
}

/// Minimum length over all simple paths from `from` to `to`, found by
/// exhaustive enumeration; `Some(0)` when the two coincide.
fn exhaustive_min_path(wtg: &Wtg, from: &WindowId, to: &WindowId) -> Option<u32> {
    fn walk(
        wtg: &Wtg,
        node: &WindowId,
        to: &WindowId,
        visited: &mut BTreeSet<WindowId>,
        depth: u32,
        best: &mut Option<u32>,
    ) {
        if node == to {
            *best = Some(best.map_or(depth, |b| b.min(depth)));
            return;
        }
        for edge in wtg.edges.iter().filter(|e| &e.source == node) {
            if visited.insert(edge.target.clone()) {
                walk(wtg, &edge.target, to, visited, depth + 1, best);
                visited.remove(&edge.target);
            }
        }
    }
    let mut best = None;
    let mut visited = BTreeSet::from([from.clone()]);
    walk(wtg, from, to, &mut visited, 0, &mut best);
    best
}

#[test]
fn wtg_distances_match_exhaustive_search() {
    criterion("wtg-distances-match-exhaustive-search", || {
        for case in 0..GRAPH_CASES {
            let mut rng = ChaCha8Rng::seed_from_u64(2_000 + case);
            let wtg = random_graph(&mut rng);
            let nodes: Vec<WindowId> = wtg.nodes.keys().cloned().collect();
            let targets: BTreeSet<WindowId> = nodes.iter().cloned().collect();
            for source in &nodes {
                let paths = shortest_distances(&wtg, source, &targets)
                    .expect("every source is a known node");
                for target in &nodes {
                    match exhaustive_min_path(&wtg, source, target) {
                        None => assert!(
                            !paths.contains_key(target),
                            "case {case}: {source}->{target} is unreachable yet reported"
                        ),
                        Some(0) => {
                            assert_eq!(paths[target].distance, 0, "case {case}");
                            assert_eq!(
                                paths[target].first_step, None,
                                "case {case}: no first step at distance zero"
                            );
                        }
                        Some(d) => {
                            let path = paths.get(target).unwrap_or_else(|| {
                                panic!("case {case}: {source}->{target} missing (oracle {d})")
                            });
                            assert_eq!(path.distance, d, "case {case}: {source}->{target}");
                            // The documented tie rule, restated from
                            // scratch: among first edges of minimal paths,
                            // smallest next window, then smallest edge id.
                            let expected = wtg
                                .edges
                                .iter()
                                .filter(|e| &e.source == source)
                                .filter(|e| {
                                    exhaustive_min_path(&wtg, &e.target, target)
                                        .is_some_and(|rest| rest + 1 == d)
                                })
                                .min_by(|a, b| {
                                    (&a.target, &a.edge_id).cmp(&(&b.target, &b.edge_id))
                                })
                                .expect("a minimal path has a first edge");
                            assert_eq!(
                                path.first_step.as_ref(),
                                wtg.trigger_map.get(&expected.edge_id),
                                "case {case}: {source}->{target} first step"
                            );
                        }
                    }
                }
            }
            let ghost = WindowId::new("ghost");
            assert!(
                shortest_distances(&wtg, &ghost, &targets).is_err(),
                "case {case}: unknown windows are rejected, not silently empty"
            );
        }
    });
}

// ---- retrieval -------------------------------------------------------------

#[test]
fn retrieval_matches_exhaustive_scan() {
    criterion("retrieval-matches-exhaustive-scan", || {
        let embedder = HashEmbedder::new(KB_DIM);
        // A deliberately tiny vocabulary: duplicate texts force exact
        // similarity ties, so the entry-id tie rule is really exercised.
        let pool = ["banner", "close", "promo", "install", "menu", "list"];
        let categories = [AdCategory::Adview, AdCategory::Popup, AdCategory::Native];
        let mut tie_seen = false;

        for case in 0..KB_CASES {
            let mut rng = ChaCha8Rng::seed_from_u64(3_000 + case);
            let count = rng.random_range(1..=KB_MAX_ENTRIES);
            let entries: Vec<KbEntry> = (0..count)
                .map(|i| {
                    let words: Vec<&str> = (0..rng.random_range(1..=3usize))
                        .map(|_| pool[rng.random_range(0..pool.len())])
                        .collect();
                    let text = words.join(" ");
                    KbEntry {
                        entry_id: format!("e{i:04}"),
                        category: categories[i % categories.len()],
                        embedding: embedder.embed(&text).expect("embedding succeeds"),
                        ui_tree_text: text,
                        note: format!("note {i}"),
                    }
                })
                .collect();
            let kb = KnowledgeBase::from_entries(entries, &embedder).expect("entries are valid");
            let query =
                embedder.embed(pool[rng.random_range(0..pool.len())]).expect("embedding succeeds");

            for k in RETRIEVAL_KS {
                let got = retrieve_top_k(&kb, &query, k).expect("dimensions agree");

                // Exhaustive scan with similarity recomputed in place.
                let mut scan: Vec<(f64, &str)> = kb
                    .entries
                    .iter()
                    .map(|entry| {
                        let dot: f64 =
                            query.iter().zip(&entry.embedding).map(|(a, b)| a * b).sum();
                        let qn: f64 = query.iter().map(|x| x * x).sum::<f64>().sqrt();
                        let en: f64 =
                            entry.embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
                        (dot / (qn * en), entry.entry_id.as_str())
                    })
                    .collect();
                scan.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
                scan.truncate(k);

                assert_eq!(got.len(), scan.len(), "case {case}, k={k}: result size");
                for (rank, (result, (sim, id))) in got.iter().zip(&scan).enumerate() {
                    assert_eq!(
                        result.entry.entry_id.as_str(),
                        *id,
                        "case {case}, k={k}, rank {rank}"
                    );
                    assert!(
                        (result.similarity - sim).abs() <= METRIC_EPS,
                        "case {case}, k={k}, rank {rank}: similarity"
                    );
                }
                tie_seen |= scan.windows(2).any(|w| w[0].0 == w[1].0);
            }
        }
        assert!(tie_seen, "the workload must include equal-similarity ranks");
    });
}

// ---- session soundness -----------------------------------------------------

#[test]
fn omniscient_sweeps_feasible_benchmarks() {
    criterion("omniscient-sweeps-feasible-benchmarks", || {
        let fully_feasible = BenchmarkSpec { infeasible_fraction: 0.0, ..efficacy_spec() };
        for seed in 0..SOUNDNESS_SEEDS {
            let (trace, score) = run_one_traced(&fully_feasible, seed, BenchPolicy::Omniscient)
                .expect("session runs");
            assert_eq!(score.detection_rate, 1.0, "seed {seed}: every finding is reachable");
            assert!(
                trace.explore_steps <= fully_feasible.max_step,
                "seed {seed}: the sweep fits the budget"
            );
            assert_eq!(trace.termination, TerminationReason::AllTriggered, "seed {seed}");
            assert_trace_invariants(&trace, fully_feasible.max_step);
        }

        let spec = efficacy_spec();
        for seed in 0..SOUNDNESS_SEEDS {
            let (trace, score) =
                run_one_traced(&spec, seed, BenchPolicy::Random).expect("session runs");
            assert_trace_invariants(&trace, spec.max_step);
            assert_eq!(
                score.matched + trace.remaining_findings.len(),
                score.total,
                "seed {seed}: matched and remaining partition the ground truth"
            );
        }
    });
}

// ---- exploration efficacy --------------------------------------------------

#[test]
fn guided_beats_random_by_margin() {
    criterion("guided-beats-random-by-margin", || {
        let spec = efficacy_spec();
        let started = Instant::now();
        let summary =
            run_bench(&spec, &[BenchPolicy::Mock, BenchPolicy::Random]).expect("benchmark runs");
        let elapsed = started.elapsed();

        assert_eq!(summary.rows.len(), 2 * EFFICACY_SEEDS);
        let mock = summary.mean_detection_rate["mock"];
        let random = summary.mean_detection_rate["random"];
        assert!(
            mock - random >= GUIDED_GAP_MIN,
            "guided exploration must lead by at least {GUIDED_GAP_MIN} \
             (mock {mock:.4}, random {random:.4})"
        );
        assert!(elapsed < EFFICACY_BUDGET, "comparison took {elapsed:?}");
    });
}

#[test]
fn structural_ablation_dominates_wtg_ablation() {
    criterion("structural-ablation-dominates-wtg-ablation", || {
        let spec = efficacy_spec();
        let summary = run_bench(
            &spec,
            &[BenchPolicy::Mock, BenchPolicy::MockNoStructural, BenchPolicy::MockNoWtg],
        )
        .expect("benchmark runs");

        let full = summary.mean_detection_rate["mock"];
        let no_structural = summary.mean_detection_rate["mock-no-structural"];
        let no_wtg = summary.mean_detection_rate["mock-no-wtg"];
        assert!(full >= no_structural, "removing guidance never helps");
        assert!(full >= no_wtg, "removing guidance never helps");
        assert!(
            full - no_structural >= full - no_wtg,
            "structural guidance carries at least the WTG share \
             (full {full:.4}, -structural {no_structural:.4}, -wtg {no_wtg:.4})"
        );
    });
}

// ---- regulation ------------------------------------------------------------

#[test]
fn regulation_rules_fire_once_each() {
    criterion("regulation-rules-fire-once-each", || {
        let model = load_model("six_rules.json");
        let registry = default_registry();
        let findings = identify_ad_widgets(&model, &registry).expect("analysis succeeds");
        assert_eq!(findings.len(), 4, "a popup, a native promo, and two banners");

        // The size boundary, exercised from both sides: one banner sits at
        // exactly the threshold share of the screen, the other just above.
        let w_reader = WindowId::new("w_reader");
        let screen_area = model.screen.area();
        let story = model.widget(&w_reader, &WidgetId::new("story_banner")).expect("fixture");
        let feature = model.widget(&w_reader, &WidgetId::new("feature_banner")).expect("fixture");
        assert_eq!(
            story.bounds.area() * OVERSIZED_RATIO_DEN,
            screen_area * OVERSIZED_RATIO_NUM,
            "the small banner is exactly at the ratio"
        );
        assert!(
            feature.bounds.area() * OVERSIZED_RATIO_DEN > screen_area * OVERSIZED_RATIO_NUM,
            "the large banner is strictly above the ratio"
        );
        let oversized = check_oversized(&model, &findings).expect("screen area is positive");
        assert_eq!(oversized.len(), 1, "only the above-threshold banner is flagged");
        assert_eq!(oversized[0].widget_id, Some(WidgetId::new("feature_banner")));

        // One session: an unskippable interstitial at launch, clickbait and
        // flagged-URL creatives served into the findings.
        let wtg = build_wtg(&model).expect("graph builds");
        let embedder = HashEmbedder::default();
        let kb = KnowledgeBase::empty(&embedder);
        let policy = MockPolicy::default();
        let sim = SimConfig {
            interstitials: vec![InterstitialSpec {
                window_id: w_reader.clone(),
                widget_id: WidgetId::new("splash_ad"),
                on: BTreeSet::from([InterstitialMoment::Launch]),
            }],
            ad_close_delay: 2,
            ad_inventory: vec![
                AdInventoryItem {
                    window_id: w_reader.clone(),
                    widget_id: WidgetId::new("splash_ad"),
                    text: Some("You WON a free phone! Act now!".to_owned()),
                    landing_url: Some("https://win.example/claim".to_owned()),
                },
                AdInventoryItem {
                    window_id: w_reader.clone(),
                    widget_id: WidgetId::new("promo"),
                    text: Some("Read today's partner story".to_owned()),
                    landing_url: Some("https://mild.example/offer".to_owned()),
                },
            ],
            ..SimConfig::default()
        };
        let opts = ExploreOptions { max_step: 10, sim, ..ExploreOptions::default() };
        let trace =
            explore(&model, &findings, &wtg, &kb, &embedder, &policy, &opts).expect("session runs");
        assert_eq!(trace.termination, TerminationReason::AllTriggered);

        let scanner = StubScanner::load(&fixture("scanner_stub.json")).expect("table loads");
        // The engine threshold, exercised from both sides.
        assert!(
            scanner.scan("https://win.example/claim").unwrap() >= MALVERTISING_ENGINE_THRESHOLD
        );
        assert!(
            scanner.scan("https://mild.example/offer").unwrap() < MALVERTISING_ENGINE_THRESHOLD
        );

        let cfg = RegulationConfig { scanner: Some(&scanner), policy: &policy };
        let report = run_all(&trace, &model, &findings, &cfg).expect("rules run");
        let rules = [
            RuleId::Oversized,
            RuleId::Overlapped,
            RuleId::Disruptive,
            RuleId::Unskippable,
            RuleId::Malvertising,
            RuleId::Clickbait,
        ];
        for rule in rules {
            assert_eq!(report.by_rule(rule).len(), 1, "{rule:?} fires exactly once");
        }
        assert_eq!(report.total(), rules.len());
        assert!(report.skipped.is_empty(), "nothing was skipped: {:?}", report.skipped);

        let overlapped = report.by_rule(RuleId::Overlapped)[0];
        assert_eq!(overlapped.widget_id, Some(WidgetId::new("feature_banner")));
        assert!(overlapped.evidence.contains("continue_reading"));
        for rule in [RuleId::Disruptive, RuleId::Unskippable, RuleId::Clickbait] {
            assert_eq!(
                report.by_rule(rule)[0].widget_id,
                Some(WidgetId::new("splash_ad")),
                "{rule:?} traces back to the interstitial"
            );
        }
    });
}

// ---- metric formulas -------------------------------------------------------

/// One window with five banner findings; the first banner has a direct
/// child so the child-id matching path is reachable.
fn pager_model() -> AppModel {
    let banner = |i: usize| {
        let top = 100 + 200 * (i as i32 - 1);
        format!(
            r#"{{"widget_id": "ad_{i}", "view_class": "com.google.android.gms.ads.AdView",
                "bounds": {{"left": 0, "top": {top}, "right": 1080, "bottom": {}}}{}}}"#,
            top + 190,
            if i == 1 {
                r#", "children": [{"widget_id": "inner_1",
                    "view_class": "android.widget.ImageView",
                    "bounds": {"left": 10, "top": 110, "right": 1070, "bottom": 280}}]"#
            } else {
                ""
            }
        )
    };
    let json = format!(
        r#"{{
          "schema": "adwise-model/1",
          "entry_window": "w_pager",
          "metadata": {{"app_name": "Pager", "category": "Tools",
                        "description": "Five banners stacked."}},
          "screen": {{"width": 1080, "height": 1920}},
          "windows": [
            {{"window_id": "w_pager", "kind": "activity",
              "layout": {{"layout_id": "l_pager",
                "root": {{"widget_id": "pager_root",
                  "view_class": "android.widget.LinearLayout",
                  "bounds": {{"left": 0, "top": 0, "right": 1080, "bottom": 1920}},
                  "children": [{banners}]}}}}}}
          ],
          "code_facts": {{}}
        }}"#,
        banners = (1..=5).map(banner).collect::<Vec<_>>().join(",\n")
    );
    parse_app_model(json.as_bytes()).expect("model parses")
}

#[test]
fn metric_formulas_match_hand_computed() {
    criterion("metric-formulas-match-hand-computed", || {
        let model = pager_model();
        let findings = identify_ad_widgets(&model, &default_registry()).expect("analysis");
        assert_eq!(findings.len(), 5, "five banners form the ground truth");

        let bounds = |i: i32| Rect::new(0, 100 + 200 * (i - 1), 1080, 290 + 200 * (i - 1));
        let rec = |window: &str, widget: &str, b: Rect, t: u64| TriggerRecord {
            t,
            window_id: WindowId::new(window),
            widget_id: WidgetId::new(widget),
            bounds: b,
            category: AdCategory::Adview,
            content: AdContent { library: None, text: None, landing_url: None, skippable: true },
        };
        let log = |t_start: u64, records: Vec<TriggerRecord>| TriggerLog { t_start, records };

        // (log, rate, latency, matched) — every expectation worked out by
        // hand from the definitions.
        let cases: Vec<(TriggerLog, f64, Option<f64>, usize)> = vec![
            // Nothing triggered.
            (log(0, vec![]), 0.0, None, 0),
            // One of five, seven seconds in.
            (log(0, vec![rec("w_pager", "ad_1", bounds(1), 7)]), 0.2, Some(7.0), 1),
            // All five, last first-match at 50s: 50 / 5 matches = 10.
            (
                log(
                    0,
                    (1..=5)
                        .map(|i| rec("w_pager", &format!("ad_{i}"), bounds(i), 10 * i as u64))
                        .collect(),
                ),
                1.0,
                Some(10.0),
                5,
            ),
            // A late session start offsets the latency.
            (log(5, vec![rec("w_pager", "ad_1", bounds(1), 55)]), 0.2, Some(50.0), 1),
            // Repeats count once, at the earliest timestamp.
            (
                log(
                    0,
                    vec![
                        rec("w_pager", "ad_1", bounds(1), 9),
                        rec("w_pager", "ad_1", bounds(1), 3),
                    ],
                ),
                0.2,
                Some(3.0),
                1,
            ),
            // Two of five: last first-match 8s over two matches.
            (
                log(
                    0,
                    vec![
                        rec("w_pager", "ad_1", bounds(1), 4),
                        rec("w_pager", "ad_2", bounds(2), 8),
                    ],
                ),
                0.4,
                Some(4.0),
                2,
            ),
            // Right widget, wrong window.
            (log(0, vec![rec("w_other", "ad_1", bounds(1), 6)]), 0.0, None, 0),
            // A direct child of the finding's widget counts.
            (log(0, vec![rec("w_pager", "inner_1", Rect::new(0, 0, 0, 0), 12)]), 0.2, Some(12.0), 1),
            // Unknown id with bounds inside the second banner counts.
            (
                log(0, vec![rec("w_pager", "mystery", Rect::new(100, 320, 500, 400), 21)]),
                0.2,
                Some(21.0),
                1,
            ),
            // Unknown ids with empty or stray bounds never count.
            (
                log(
                    0,
                    vec![
                        rec("w_pager", "mystery", Rect::new(0, 0, 0, 0), 2),
                        rec("w_pager", "ad_9", Rect::new(0, 1500, 50, 1550), 3),
                    ],
                ),
                0.0,
                None,
                0,
            ),
        ];
        assert_eq!(cases.len(), 10);

        for (i, (log, want_rate, want_latency, want_matched)) in cases.iter().enumerate() {
            let score = score_session(log, &findings, &model).expect("non-empty ground truth");
            assert!(
                (score.detection_rate - want_rate).abs() <= METRIC_EPS,
                "log {i}: rate {} vs {want_rate}",
                score.detection_rate
            );
            match (score.pwdl, want_latency) {
                (None, None) => {}
                (Some(got), Some(want)) => assert!(
                    (got - want).abs() <= METRIC_EPS,
                    "log {i}: latency {got} vs {want}"
                ),
                (got, want) => panic!("log {i}: latency {got:?} vs {want:?}"),
            }
            assert_eq!(score.matched, *want_matched, "log {i}: matched count");
            assert_eq!(score.total, 5, "log {i}: ground-truth size");
        }
    });
}

// ---- re-planning around dead transitions -----------------------------------

#[test]
fn detour_recovery_avoids_failed_actions() {
    criterion("detour-recovery-avoids-failed-actions", || {
        let model = load_model("detour.json");
        let registry = default_registry();
        let findings = identify_ad_widgets(&model, &registry).expect("analysis succeeds");
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].widget_id.as_str(), "bonus_ad");
        assert_eq!(findings[0].category, AdCategory::Popup);

        let wtg = build_wtg(&model).expect("graph builds");
        let embedder = HashEmbedder::default();
        let shop_layout = &model.window(&WindowId::new("w_shop")).expect("fixture").layout;
        let entry = KnowledgeBase::make_entry(
            "promo_route",
            AdCategory::Popup,
            shop_layout,
            "tapping go_promo opens the promotions screen with advertising content",
            &embedder,
        )
        .expect("entry embeds");
        let kb = KnowledgeBase::from_entries(vec![entry], &embedder).expect("entry is valid");

        // At runtime the one-hop shortcut is broken; only the two-hop route
        // through the shop works.
        let feasible = BTreeSet::from([InvocationId::new("i_shop"), InvocationId::new("i_promo")]);
        let opts = ExploreOptions {
            max_step: 10,
            sim: SimConfig { feasible_edges: Some(feasible), ..SimConfig::default() },
            ..ExploreOptions::default()
        };
        let policy = MockPolicy::default();
        let trace =
            explore(&model, &findings, &wtg, &kb, &embedder, &policy, &opts).expect("session runs");

        assert_eq!(trace.termination, TerminationReason::AllTriggered);
        let score = score_session(&trace.log, &findings, &model).expect("non-empty ground truth");
        assert_eq!(score.detection_rate, 1.0, "the popup behind the detour is triggered");

        // The shortcut is tried once, marked failed, then routed around.
        let shortcut = Action::Click { widget_id: WidgetId::new("go_ads") };
        assert!(
            trace.steps.iter().any(|s| {
                s.phase == StepPhase::Explore && s.marked_failed && s.action == shortcut
            }),
            "the infeasible shortcut is attempted and marked failed"
        );
        assert_eq!(
            trace.steps.iter().filter(|s| s.action == shortcut).count(),
            1,
            "the dead shortcut is never retried"
        );
        assert!(trace.steps.iter().any(|s| s.window_after == WindowId::new("w_shop")));
        assert!(trace.steps.iter().any(|s| s.window_after == WindowId::new("w_promos")));
        assert_no_failed_click_repeats(&trace);
        assert_trace_invariants(&trace, opts.max_step);
    });
}
