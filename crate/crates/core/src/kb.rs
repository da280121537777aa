//! Semantic and structural guidance.
//!
//! Structural guidance works by retrieval: every knowledge-base entry is an
//! ad-bearing UI whose widget tree has been serialized to text and embedded
//! as a unit vector. At each exploration step the current UI is serialized
//! the same way, embedded, and matched against the knowledge base by cosine
//! similarity; the notes of the top-k most similar UIs tell the decision
//! policy which kinds of widgets have led to ads before.
//!
//! The default embedder is a hashed bag-of-words (FNV-1a buckets, d = 256,
//! L2-normalized) so the whole loop is deterministic and offline; a remote
//! embedding endpoint can be dropped in through the same trait.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{digest16, fnv1a64};
use crate::model::{parse_layout_fragment, AppMetadata, UiLayout, WidgetId};
use crate::policy::DecisionPolicy;
use crate::static_ads::AdCategory;

/// Embedding dimension of the default hashed bag-of-words embedder.
pub const DEFAULT_EMBED_DIM: usize = 256;

/// Default number of similar UIs retrieved per step.
pub const DEFAULT_TOP_K: usize = 3;

/// Fixed sentence appended to every semantic guidance text.
pub const SEMANTIC_SUFFIX: &str = "Navigate through the app and click any buttons or links \
                                   that lead to other apps or advertising content.";

/// Fixed structural guidance when the knowledge base has nothing similar.
pub const NO_SIMILAR_AD_UIS: &str = "no similar ad UIs known";

/// Sidecar file holding cached embeddings inside a knowledge-base directory.
pub const EMBEDDING_CACHE_FILE: &str = "embeddings.cache.json";

// ---- UI serialization ------------------------------------------------------

/// The attributes retained when a UI is serialized for embedding and
/// prompts. Everything else (class names, bounds, …) is dropped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UiRecord {
    pub resource_id: WidgetId,
    pub text: Option<String>,
    pub content_description: Option<String>,
    pub clickable: bool,
}

impl UiRecord {
    /// Renders the record as `(resource-id: …, text: …, content-desc: …,
    /// clickable: …)`, omitting absent attributes.
    pub fn render(&self) -> String {
        let mut parts = vec![format!("resource-id: {}", self.resource_id)];
        if let Some(text) = &self.text {
            parts.push(format!("text: {text}"));
        }
        if let Some(desc) = &self.content_description {
            parts.push(format!("content-desc: {desc}"));
        }
        parts.push(format!("clickable: {}", self.clickable));
        format!("({})", parts.join(", "))
    }
}

/// Flattens a layout into per-widget records in depth-first document order.
pub fn records_of_layout(layout: &UiLayout) -> Vec<UiRecord> {
    let mut records = Vec::new();
    let mut stack = vec![&layout.root];
    let mut seen = std::collections::BTreeSet::new();
    while let Some(id) = stack.pop() {
        if !seen.insert(id.clone()) {
            continue; // defensive: malformed trees must not loop forever
        }
        if let Some(widget) = layout.widget(id) {
            records.push(UiRecord {
                resource_id: widget.widget_id.clone(),
                text: widget.text.clone(),
                content_description: widget.content_description.clone(),
                clickable: widget.clickable,
            });
        }
        // Push children reversed so the leftmost child pops first.
        for kid in layout.children_of(id).iter().rev() {
            stack.push(kid);
        }
    }
    records
}

/// Renders records one per line.
pub fn render_records(records: &[UiRecord]) -> String {
    let mut text = String::new();
    for record in records {
        text.push_str(&record.render());
        text.push('\n');
    }
    text
}

/// Serializes a layout to the retained-attribute text form used for both
/// knowledge-base entries and live UI states.
pub fn serialize_ui_tree(layout: &UiLayout) -> String {
    render_records(&records_of_layout(layout))
}

// ---- embedders -------------------------------------------------------------

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("remote embedder failed ({}): {message}", if *.retryable { "retryable" } else { "permanent" })]
    Remote { message: String, retryable: bool },
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// A text-to-unit-vector encoder. Implementations must be safe to share
/// across concurrently running exploration sessions.
pub trait Embedder: Sync {
    /// Stable identity used to key the embedding cache, e.g. `hash-bow/256`.
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    /// Returns a unit-norm vector of dimension [`Self::dim`].
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError>;
}

/// Deterministic hashed bag-of-words embedder: each lowercase alphanumeric
/// token hashes into one of `dim` buckets; the count vector is
/// L2-normalized. Token order does not matter. Empty texts map to the
/// reserved unit vector e₁ instead of the (unnormalizable) zero vector.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder { dim }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(DEFAULT_EMBED_DIM)
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> String {
        format!("hash-bow/{}", self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let mut vector = vec![0.0f64; self.dim];
        let mut any = false;
        for token in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
        {
            let bucket = (fnv1a64(token.as_bytes()) % self.dim as u64) as usize;
            vector[bucket] += 1.0;
            any = true;
        }
        if !any {
            vector[0] = 1.0;
            return Ok(vector);
        }
        let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut vector {
            *x /= norm;
        }
        Ok(vector)
    }
}

/// Environment variable naming the remote embedding endpoint URL.
pub const EMBED_ENDPOINT_VAR: &str = "ADWISE_EMBED_ENDPOINT";
/// Environment variable holding the optional bearer key for the endpoint.
pub const EMBED_KEY_VAR: &str = "ADWISE_EMBED_KEY";

/// Client for an HTTP embedding endpoint: POST `{"text": …}`, response
/// `{"vector": […]}`. Vectors are re-normalized locally so the unit-norm
/// invariant holds regardless of the backend.
pub struct RemoteEmbedder {
    endpoint: String,
    key: Option<String>,
    dim: usize,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, key: Option<String>, dim: usize) -> Self {
        RemoteEmbedder {
            endpoint: endpoint.into(),
            key,
            dim,
            client: reqwest::blocking::Client::new(),
        }
    }

    /// Builds the client from `ADWISE_EMBED_ENDPOINT` / `ADWISE_EMBED_KEY`;
    /// `None` when the endpoint variable is unset.
    pub fn from_env(dim: usize) -> Option<Self> {
        let endpoint = std::env::var(EMBED_ENDPOINT_VAR).ok()?;
        let key = std::env::var(EMBED_KEY_VAR).ok();
        Some(RemoteEmbedder::new(endpoint, key, dim))
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vector: Vec<f64>,
}

impl Embedder for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote/{}/{}", self.endpoint, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let mut request = self.client.post(&self.endpoint).json(&EmbedRequest { text });
        if let Some(key) = &self.key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| EmbedError::Remote {
            message: e.to_string(),
            retryable: true,
        })?;
        let status = response.status();
        if !status.is_success() {
            return Err(EmbedError::Remote {
                message: format!("endpoint returned status {status}"),
                retryable: status.is_server_error(),
            });
        }
        let body: EmbedResponse = response.json().map_err(|e| EmbedError::Remote {
            message: format!("malformed embedding response: {e}"),
            retryable: false,
        })?;
        if body.vector.len() != self.dim {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dim,
                got: body.vector.len(),
            });
        }
        let norm = body.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            let mut e1 = vec![0.0; self.dim];
            e1[0] = 1.0;
            return Ok(e1);
        }
        Ok(body.vector.into_iter().map(|x| x / norm).collect())
    }
}

/// Cosine similarity of two equal-length vectors; 0 when either is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len(), "cosine requires equal dimensions");
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

// ---- knowledge base --------------------------------------------------------

/// One known ad UI: its serialized tree, embedding, and a note naming the
/// widget that leads to advertising content.
#[derive(Debug, Clone, PartialEq)]
pub struct KbEntry {
    pub entry_id: String,
    pub category: AdCategory,
    pub ui_tree_text: String,
    pub embedding: Vec<f64>,
    pub note: String,
}

#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    pub entries: Vec<KbEntry>,
    pub dim: usize,
    pub embedder_id: String,
}

#[derive(Debug, Error)]
pub enum KbError {
    #[error("cannot read knowledge base: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed knowledge-base entry {path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("duplicate entry id {0:?}")]
    DuplicateEntryId(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("entry {entry_id:?} has embedding norm {norm}, expected 1")]
    BadNorm { entry_id: String, norm: f64 },
    #[error("query dimension {got} does not match knowledge base dimension {expected}")]
    QueryDimension { expected: usize, got: usize },
}

/// On-disk form of one knowledge-base entry.
#[derive(Deserialize)]
struct KbEntryDoc {
    entry_id: String,
    category: AdCategory,
    /// App-model layout fragment (`{layout_id, root}`).
    ui_tree: serde_json::Value,
    note: String,
}

#[derive(Default, Serialize, Deserialize)]
struct EmbeddingCache {
    embedder: String,
    entries: BTreeMap<String, CachedEmbedding>,
}

#[derive(Serialize, Deserialize)]
struct CachedEmbedding {
    digest: String,
    vector: Vec<f64>,
}

const NORM_TOLERANCE: f64 = 1e-6;

fn check_norm(entry_id: &str, vector: &[f64]) -> Result<(), KbError> {
    let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > NORM_TOLERANCE {
        return Err(KbError::BadNorm { entry_id: entry_id.to_owned(), norm });
    }
    Ok(())
}

impl KnowledgeBase {
    /// An empty knowledge base for the given embedder.
    pub fn empty(embedder: &dyn Embedder) -> Self {
        KnowledgeBase { entries: Vec::new(), dim: embedder.dim(), embedder_id: embedder.id() }
    }

    /// Builds a knowledge base from already-embedded entries, enforcing the
    /// dimension and unit-norm invariants.
    pub fn from_entries(
        entries: Vec<KbEntry>,
        embedder: &dyn Embedder,
    ) -> Result<Self, KbError> {
        let mut seen = std::collections::BTreeSet::new();
        for entry in &entries {
            if !seen.insert(entry.entry_id.clone()) {
                return Err(KbError::DuplicateEntryId(entry.entry_id.clone()));
            }
            if entry.embedding.len() != embedder.dim() {
                return Err(KbError::Embed(EmbedError::DimensionMismatch {
                    expected: embedder.dim(),
                    got: entry.embedding.len(),
                }));
            }
            check_norm(&entry.entry_id, &entry.embedding)?;
        }
        Ok(KnowledgeBase { entries, dim: embedder.dim(), embedder_id: embedder.id() })
    }

    /// Builds an entry by serializing and embedding a layout.
    pub fn make_entry(
        entry_id: impl Into<String>,
        category: AdCategory,
        layout: &UiLayout,
        note: impl Into<String>,
        embedder: &dyn Embedder,
    ) -> Result<KbEntry, EmbedError> {
        let ui_tree_text = serialize_ui_tree(layout);
        let embedding = embedder.embed(&ui_tree_text)?;
        Ok(KbEntry {
            entry_id: entry_id.into(),
            category,
            ui_tree_text,
            embedding,
            note: note.into(),
        })
    }
}

/// Loads a knowledge base from a directory of one-JSON-file-per-entry
/// (`{entry_id, category, ui_tree, note}`), embedding each serialized tree.
///
/// Embeddings are cached in a sidecar file keyed by the embedder identity
/// and the entry's text digest; the cache is refreshed on change. Failing
/// to write the cache is not an error — it is only an optimization.
pub fn load_kb(dir: &Path, embedder: &dyn Embedder) -> Result<KnowledgeBase, KbError> {
    let mut paths: Vec<std::path::PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension().is_some_and(|ext| ext == "json")
                && p.file_name().is_some_and(|n| n != EMBEDDING_CACHE_FILE)
        })
        .collect();
    paths.sort();

    let cache_path = dir.join(EMBEDDING_CACHE_FILE);
    let mut cache: EmbeddingCache = std::fs::read(&cache_path)
        .ok()
        .and_then(|bytes| serde_json::from_slice(&bytes).ok())
        .filter(|c: &EmbeddingCache| c.embedder == embedder.id())
        .unwrap_or_else(|| EmbeddingCache {
            embedder: embedder.id(),
            entries: BTreeMap::new(),
        });
    let mut cache_dirty = false;

    let mut entries = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for path in &paths {
        let bytes = std::fs::read(path)?;
        let doc: KbEntryDoc = serde_json::from_slice(&bytes).map_err(|source| KbError::Json {
            path: path.display().to_string(),
            source,
        })?;
        if !seen.insert(doc.entry_id.clone()) {
            return Err(KbError::DuplicateEntryId(doc.entry_id));
        }
        let layout = parse_layout_fragment(&doc.ui_tree).map_err(|e| KbError::Json {
            path: path.display().to_string(),
            source: serde_json::Error::io(std::io::Error::other(e.to_string())),
        })?;
        let ui_tree_text = serialize_ui_tree(&layout);
        let digest = digest16(&ui_tree_text);

        let cached = cache
            .entries
            .get(&doc.entry_id)
            .filter(|c| c.digest == digest)
            .map(|c| c.vector.clone());
        let embedding = match cached {
            Some(vector) if vector.len() == embedder.dim() => vector,
            _ => {
                let vector = embedder.embed(&ui_tree_text)?;
                cache.entries.insert(
                    doc.entry_id.clone(),
                    CachedEmbedding { digest, vector: vector.clone() },
                );
                cache_dirty = true;
                vector
            }
        };
        check_norm(&doc.entry_id, &embedding)?;
        entries.push(KbEntry {
            entry_id: doc.entry_id,
            category: doc.category,
            ui_tree_text,
            embedding,
            note: doc.note,
        });
    }

    if cache_dirty {
        if let Ok(serialized) = serde_json::to_vec_pretty(&cache) {
            let _ = std::fs::write(&cache_path, serialized);
        }
    }

    Ok(KnowledgeBase { entries, dim: embedder.dim(), embedder_id: embedder.id() })
}

// ---- retrieval -------------------------------------------------------------

/// One retrieved entry with its similarity to the query.
#[derive(Debug, Clone)]
pub struct RetrievedEntry<'a> {
    pub entry: &'a KbEntry,
    pub similarity: f64,
}

/// The `k` entries most similar to the query, in descending similarity;
/// equal similarities rank by ascending entry id. Returns fewer than `k`
/// entries only when the knowledge base is smaller than `k`.
pub fn retrieve_top_k<'a>(
    kb: &'a KnowledgeBase,
    query: &[f64],
    k: usize,
) -> Result<Vec<RetrievedEntry<'a>>, KbError> {
    if query.len() != kb.dim {
        return Err(KbError::QueryDimension { expected: kb.dim, got: query.len() });
    }
    let mut scored: Vec<RetrievedEntry<'a>> = kb
        .entries
        .iter()
        .map(|entry| RetrievedEntry { entry, similarity: cosine(query, &entry.embedding) })
        .collect();
    scored.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then_with(|| a.entry.entry_id.cmp(&b.entry.entry_id))
    });
    scored.truncate(k);
    Ok(scored)
}

/// [`retrieve_top_k`] restricted to entries of the given ad categories.
/// Ranking and tie-breaking are identical; entries of other categories are
/// simply invisible to the query. Sessions use this to stop retrieving
/// guidance for ad kinds that have already been triggered.
pub fn retrieve_top_k_in<'a>(
    kb: &'a KnowledgeBase,
    query: &[f64],
    k: usize,
    categories: &std::collections::BTreeSet<AdCategory>,
) -> Result<Vec<RetrievedEntry<'a>>, KbError> {
    let all = retrieve_top_k(kb, query, kb.entries.len())?;
    let mut filtered: Vec<RetrievedEntry<'a>> = all
        .into_iter()
        .filter(|r| categories.contains(&r.entry.category))
        .collect();
    filtered.truncate(k);
    Ok(filtered)
}

// ---- guidance rendering ----------------------------------------------------

/// Renders the structural guidance blocks for the retrieved similar UIs:
/// for each entry, the widget list of that UI and its note of which widget
/// "can lead to advertising content". The current UI's own candidate list
/// is appended once by the action-prompt assembler, keeping the prompt's
/// section order without duplicating the list.
pub fn render_structural_guidance(retrieved: &[RetrievedEntry<'_>]) -> String {
    if retrieved.is_empty() {
        return NO_SIMILAR_AD_UIS.to_owned();
    }
    let mut text = format!("Below are {} most similar UIs of the current UI.\n", retrieved.len());
    for (i, item) in retrieved.iter().enumerate() {
        let lines: Vec<&str> =
            item.entry.ui_tree_text.lines().filter(|l| !l.is_empty()).collect();
        text.push_str(&format!("In UI-{} we have {} UI widgets, namely:\n", i + 1, lines.len()));
        for (j, line) in lines.iter().enumerate() {
            text.push_str(&format!("  index -{j}: {line} to click\n"));
        }
        text.push_str(&format!(
            "  In this UI, {} can lead to advertising content\n",
            item.entry.note
        ));
    }
    text
}

/// The per-step guidance triple fed to the decision policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidanceBundle {
    pub wtg_text: String,
    pub semantic_text: String,
    pub structural_text: String,
}

/// Bundles the three guidance texts (order: WTG, semantic, structural).
pub fn assemble_bundle(
    wtg_text: impl Into<String>,
    semantic_text: impl Into<String>,
    structural_text: impl Into<String>,
) -> GuidanceBundle {
    GuidanceBundle {
        wtg_text: wtg_text.into(),
        semantic_text: semantic_text.into(),
        structural_text: structural_text.into(),
    }
}

/// Semantic guidance: the policy's one-sentence functionality summary with
/// the fixed exploration suffix. A failing policy falls back to a template
/// built from the metadata.
pub fn summarize_functionality(metadata: &AppMetadata, policy: &dyn DecisionPolicy) -> String {
    let summary = match policy.summarize_app(metadata) {
        Ok(summary) => summary,
        Err(_) => format!("Use the app {} ({}).", metadata.app_name, metadata.category),
    };
    let summary = summary.trim();
    if summary.is_empty() {
        format!(
            "Use the app {} ({}). {}",
            metadata.app_name, metadata.category, SEMANTIC_SUFFIX
        )
    } else {
        format!("{summary} {SEMANTIC_SUFFIX}")
    }
}
