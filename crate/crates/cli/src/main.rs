//! Command-line front end: static ad-widget analysis, guided exploration
//! against the simulator, regulation checking, policy benchmarks, and
//! trace scoring.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use adwise_core::bench::{run_bench, to_csv, BenchPolicy, BenchmarkSpec};
use adwise_core::explorer::{explore, parse_trace, serialize_trace, ExploreOptions};
use adwise_core::kb::{load_kb, HashEmbedder, KnowledgeBase, DEFAULT_TOP_K};
use adwise_core::metrics::score_session;
use adwise_core::model::{parse_app_model, AppModel, InvocationId};
use adwise_core::policy::{
    DecisionPolicy, MockPolicy, OmniscientPolicy, RandomPolicy, RemotePolicy,
};
use adwise_core::regulation::{run_all, RegulationConfig, RuleId, StubScanner};
use adwise_core::sim::SimConfig;
use adwise_core::static_ads::{
    default_registry, identify_ad_widgets, load_registry, AdEvidence, AdLibraryRegistry,
    AdWidgetFinding,
};
use adwise_core::wtg::build_wtg;

#[derive(Parser)]
#[command(name = "adwise", version, about = "Ad-widget analysis and guided UI exploration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Identify ad widgets in an app model.
    Analyze(AnalyzeArgs),
    /// Run one guided exploration session against the simulated app.
    Explore(ExploreArgs),
    /// Check a recorded session trace against the regulation rules.
    Regulate(RegulateArgs),
    /// Compare decision policies over generated benchmark apps.
    Bench(BenchArgs),
    /// Score a recorded session trace against the static findings.
    Report(ReportArgs),
}

// ---- shared plumbing -------------------------------------------------------

fn load_model(path: &Path) -> Result<AppModel> {
    let bytes =
        std::fs::read(path).with_context(|| format!("cannot read model {}", path.display()))?;
    parse_app_model(&bytes).with_context(|| format!("cannot parse model {}", path.display()))
}

fn load_registry_opt(path: Option<&PathBuf>) -> Result<AdLibraryRegistry> {
    match path {
        Some(path) => load_registry(path)
            .with_context(|| format!("cannot load registry {}", path.display())),
        None => Ok(default_registry()),
    }
}

fn analyze_model(model: &AppModel, registry: &AdLibraryRegistry) -> Result<Vec<AdWidgetFinding>> {
    identify_ad_widgets(model, registry).context("static analysis failed")
}

fn describe_evidence(evidence: &AdEvidence) -> String {
    match evidence {
        AdEvidence::ViewClass { library, view_class } => {
            format!("{library} view class {view_class}")
        }
        AdEvidence::ShowApi { library, target, .. } => format!("{library} show API {target}"),
        AdEvidence::Intent { uri, .. } => format!("intent toward {uri}"),
    }
}

// ---- analyze ---------------------------------------------------------------

#[derive(Args)]
struct AnalyzeArgs {
    /// App model document.
    model: PathBuf,
    /// Ad-library registry; the bundled registry when omitted.
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Also print the window transition graph.
    #[arg(long)]
    wtg: bool,
    /// Emit findings as JSON instead of text.
    #[arg(long)]
    json: bool,
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let registry = load_registry_opt(args.registry.as_ref())?;
    let findings = analyze_model(&model, &registry)?;

    if args.json {
        println!("{}", serde_json::to_string_pretty(&findings)?);
    } else if findings.is_empty() {
        println!("no ad widgets found");
    } else {
        for finding in &findings {
            println!(
                "{}/{}  {}  ({})",
                finding.window_id,
                finding.widget_id,
                finding.category,
                describe_evidence(&finding.evidence)
            );
        }
    }

    if args.wtg {
        let wtg = build_wtg(&model).context("graph construction failed")?;
        println!("{}", wtg.export_text());
    }
    Ok(())
}

// ---- explore ---------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyChoice {
    Mock,
    MockNoStructural,
    MockNoWtg,
    Random,
    Omniscient,
    /// Remote completion endpoint from ADWISE_LLM_ENDPOINT.
    Remote,
}

#[derive(Args)]
struct ExploreArgs {
    /// App model document.
    model: PathBuf,
    /// Ad-library registry; the bundled registry when omitted.
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Knowledge-base directory of similar ad UIs.
    #[arg(long)]
    kb: Option<PathBuf>,
    /// Decision policy driving the session.
    #[arg(long, value_enum, default_value_t = PolicyChoice::Mock)]
    policy: PolicyChoice,
    /// Simulator seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Explore-phase step budget.
    #[arg(long, default_value_t = 40)]
    max_step: usize,
    /// Similar UIs retrieved per step.
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
    /// Navigation edge that is broken at runtime (repeatable).
    #[arg(long = "broken")]
    broken: Vec<String>,
    /// Write the session trace to this file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_explore(args: &ExploreArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let registry = load_registry_opt(args.registry.as_ref())?;
    let findings = analyze_model(&model, &registry)?;
    if findings.is_empty() {
        bail!("nothing to explore: the model has no ad widgets");
    }
    let wtg = build_wtg(&model).context("graph construction failed")?;

    let embedder = HashEmbedder::default();
    let kb = match &args.kb {
        Some(dir) => load_kb(dir, &embedder)
            .with_context(|| format!("cannot load knowledge base {}", dir.display()))?,
        None => KnowledgeBase::empty(&embedder),
    };

    let all_edges: BTreeSet<InvocationId> = model
        .code_facts
        .navigations
        .iter()
        .map(|n| n.invocation_id.clone())
        .collect();
    let mut sim = SimConfig { seed: args.seed, ..SimConfig::default() };
    if !args.broken.is_empty() {
        let mut feasible = all_edges.clone();
        for edge in &args.broken {
            let edge = InvocationId::new(edge.clone());
            if !all_edges.contains(&edge) {
                bail!("--broken {edge}: no such navigation edge");
            }
            feasible.remove(&edge);
        }
        sim.feasible_edges = Some(feasible);
    }
    let opts = ExploreOptions { max_step: args.max_step, top_k: args.top_k, sim };

    let remote;
    let omniscient;
    let policy: &dyn DecisionPolicy = match args.policy {
        PolicyChoice::Mock => &MockPolicy { use_structural: true, use_wtg: true },
        PolicyChoice::MockNoStructural => &MockPolicy { use_structural: false, use_wtg: true },
        PolicyChoice::MockNoWtg => &MockPolicy { use_structural: true, use_wtg: false },
        PolicyChoice::Random => &RandomPolicy::new(args.seed),
        PolicyChoice::Omniscient => {
            let feasible = match &opts.sim.feasible_edges {
                Some(edges) => edges.clone(),
                None => all_edges.clone(),
            };
            omniscient = OmniscientPolicy::new(wtg.clone(), feasible);
            &omniscient
        }
        PolicyChoice::Remote => {
            remote = RemotePolicy::from_env()
                .context("--policy remote requires ADWISE_LLM_ENDPOINT")?;
            &remote
        }
    };

    let trace = explore(&model, &findings, &wtg, &kb, &embedder, policy, &opts)
        .context("exploration failed")?;
    let score = score_session(&trace.log, &findings, &model).context("scoring failed")?;

    let text = serialize_trace(&trace);
    match &args.out {
        Some(path) => {
            std::fs::write(path, &text)
                .with_context(|| format!("cannot write trace {}", path.display()))?;
            println!(
                "policy {}  steps {}  termination {}  detected {}/{}",
                trace.policy, trace.explore_steps, trace.termination, score.matched, score.total
            );
            println!("trace written to {}", path.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}

// ---- regulate --------------------------------------------------------------

#[derive(Args)]
struct RegulateArgs {
    /// Session trace produced by `explore`.
    trace: PathBuf,
    /// App model document the trace was recorded against.
    model: PathBuf,
    /// Ad-library registry; the bundled registry when omitted.
    #[arg(long)]
    registry: Option<PathBuf>,
    /// URL reputation table for the malvertising rule.
    #[arg(long)]
    scanner: Option<PathBuf>,
    /// Emit the report as JSON instead of text.
    #[arg(long)]
    json: bool,
}

fn cmd_regulate(args: &RegulateArgs) -> Result<()> {
    let bytes = std::fs::read(&args.trace)
        .with_context(|| format!("cannot read trace {}", args.trace.display()))?;
    let trace = parse_trace(&bytes)
        .with_context(|| format!("cannot parse trace {}", args.trace.display()))?;
    let model = load_model(&args.model)?;
    let registry = load_registry_opt(args.registry.as_ref())?;
    let findings = analyze_model(&model, &registry)?;

    let scanner = match &args.scanner {
        Some(path) => Some(
            StubScanner::load(path)
                .with_context(|| format!("cannot load scanner table {}", path.display()))?,
        ),
        None => None,
    };
    let policy = MockPolicy::default();
    let cfg = RegulationConfig {
        scanner: scanner.as_ref().map(|s| s as _),
        policy: &policy,
    };
    let report = run_all(&trace, &model, &findings, &cfg).context("regulation checks failed")?;

    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    let rules = [
        RuleId::Oversized,
        RuleId::Overlapped,
        RuleId::Disruptive,
        RuleId::Unskippable,
        RuleId::Malvertising,
        RuleId::Clickbait,
    ];
    for rule in rules {
        println!("{rule}: {}", report.by_rule(rule).len());
    }
    for violation in report.all() {
        let place = match (&violation.window_id, &violation.widget_id) {
            (Some(window), Some(widget)) => format!("{window}/{widget}"),
            (Some(window), None) => window.to_string(),
            _ => "session".to_owned(),
        };
        println!("{}  {}  {}", violation.rule, place, violation.evidence);
    }
    for note in &report.skipped {
        println!("skipped: {note}");
    }
    Ok(())
}

// ---- bench -----------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BenchPolicyChoice {
    Mock,
    MockNoStructural,
    MockNoWtg,
    Random,
    Omniscient,
}

impl From<BenchPolicyChoice> for BenchPolicy {
    fn from(choice: BenchPolicyChoice) -> Self {
        match choice {
            BenchPolicyChoice::Mock => BenchPolicy::Mock,
            BenchPolicyChoice::MockNoStructural => BenchPolicy::MockNoStructural,
            BenchPolicyChoice::MockNoWtg => BenchPolicy::MockNoWtg,
            BenchPolicyChoice::Random => BenchPolicy::Random,
            BenchPolicyChoice::Omniscient => BenchPolicy::Omniscient,
        }
    }
}

#[derive(Args)]
struct BenchArgs {
    /// Base seed of the benchmark family.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Generated apps per policy.
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    /// Windows per generated app.
    #[arg(long, default_value_t = 8)]
    windows: usize,
    /// Probability of each extra (non-tree) edge.
    #[arg(long, default_value_t = 0.15)]
    density: f64,
    /// Ad findings generated per category.
    #[arg(long, default_value_t = 1)]
    findings: usize,
    /// Fraction of edges broken at runtime.
    #[arg(long, default_value_t = 0.25)]
    infeasible: f64,
    /// Explore-phase step budget.
    #[arg(long, default_value_t = 40)]
    max_step: usize,
    /// Policies to compare.
    #[arg(long, value_enum, value_delimiter = ',',
          default_values_t = [BenchPolicyChoice::Mock, BenchPolicyChoice::Random])]
    policies: Vec<BenchPolicyChoice>,
    /// Emit per-session rows as CSV instead of the summary.
    #[arg(long)]
    csv: bool,
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let spec = BenchmarkSpec {
        seed: args.seed,
        num_seeds: args.seeds,
        num_windows: args.windows,
        edge_density: args.density,
        findings_per_category: args.findings,
        infeasible_fraction: args.infeasible,
        max_step: args.max_step,
    };
    let policies: Vec<BenchPolicy> = args.policies.iter().map(|&p| p.into()).collect();
    let summary = run_bench(&spec, &policies).context("benchmark failed")?;

    if args.csv {
        print!("{}", to_csv(&summary));
        return Ok(());
    }
    for (policy, rate) in &summary.mean_detection_rate {
        match summary.mean_pwdl.get(policy) {
            Some(pwdl) => println!("{policy}: detection {rate:.4}  latency {pwdl:.2}"),
            None => println!("{policy}: detection {rate:.4}  latency n/a"),
        }
    }
    Ok(())
}

// ---- report ----------------------------------------------------------------

#[derive(Args)]
struct ReportArgs {
    /// Session trace produced by `explore`.
    trace: PathBuf,
    /// App model document the trace was recorded against.
    model: PathBuf,
    /// Ad-library registry; the bundled registry when omitted.
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Emit the score as JSON instead of text.
    #[arg(long)]
    json: bool,
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let bytes = std::fs::read(&args.trace)
        .with_context(|| format!("cannot read trace {}", args.trace.display()))?;
    let trace = parse_trace(&bytes)
        .with_context(|| format!("cannot parse trace {}", args.trace.display()))?;
    let model = load_model(&args.model)?;
    let registry = load_registry_opt(args.registry.as_ref())?;
    let findings = analyze_model(&model, &registry)?;
    let score = score_session(&trace.log, &findings, &model).context("scoring failed")?;

    if args.json {
        println!("{}", serde_json::to_string_pretty(&score)?);
        return Ok(());
    }
    println!("detected {}/{} ({:.4})", score.matched, score.total, score.detection_rate);
    match score.pwdl {
        Some(latency) => println!("per-widget detection latency {latency:.2}"),
        None => println!("per-widget detection latency n/a"),
    }
    println!("steps {}  termination {}", trace.explore_steps, trace.termination);
    Ok(())
}

// ---- entry -----------------------------------------------------------------

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Analyze(args) => cmd_analyze(args),
        Command::Explore(args) => cmd_explore(args),
        Command::Regulate(args) => cmd_regulate(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Report(args) => cmd_report(args),
    }
}
