//! Workspace layout, stage graph and the end-to-end comparison.
//!
//! Every stage reads its upstream artifacts from the workspace directory,
//! writes its outputs atomically and appends a [`StageArtifact`] to
//! `journal.jsonl`. A stage whose input and config digests match its last
//! journal entry is skipped and journaled as cached.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{AgentContext, RoleModels};
use crate::categorize::{self, CategorizedCorpus};
use crate::corpus::{self, CorpusSplit, InputFormat, Ticket};
use crate::discovery::{self, CategorySet, DiscoveryConfig};
use crate::eval::{self, AnswerRecord, Answerer, EvalQuery, EvalReport, EvalScore, METHODS};
use crate::fsutil::{write_atomic, write_json_atomic};
use crate::llm::{Backend, Gateway, GatewayConfig, HttpBackend};
use crate::par::ExecMode;
use crate::rag::{self, Bm25Params, GreedyClusterer, HashedTfEmbedder, KbBuild, SearchIndex};
use crate::simulate;
use crate::synthesis::{self, HierarchyConfig, KnowledgeArticle, KbManifest, SynthesisThresholds};
use crate::synthetic::{self, SyntheticConfig};

type AnswerFn<'a> = Box<dyn Fn(&str) -> Result<rag::Answer, rag::RagError> + Sync + 'a>;

/// Requests per minute used with the scripted backend.
pub const MOCK_REQUESTS_PER_MINUTE: u32 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendChoice {
    #[default]
    Mock,
    Http,
}

impl FromStr for BackendChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(Self::Mock),
            "http" => Ok(Self::Http),
            other => Err(format!("unknown backend `{other}` (expected mock or http)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k: usize,
    pub k1: f64,
    pub b: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        let p = Bm25Params::default();
        Self {
            k: rag::DEFAULT_K,
            k1: p.k1,
            b: p.b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub runs: usize,
    pub methods: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            runs: eval::DEFAULT_RUNS,
            methods: METHODS.iter().map(|m| m.to_string()).collect(),
        }
    }
}

/// Everything a workspace run needs, loadable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkspaceConfig {
    pub workspace_dir: PathBuf,
    pub backend: BackendChoice,
    pub endpoint: String,
    /// Ticket file to ingest. When absent the bundled synthetic corpus is used.
    pub input: Option<PathBuf>,
    pub input_format: InputFormat,
    pub models: RoleModels,
    pub thresholds: SynthesisThresholds,
    pub discovery: DiscoveryConfig,
    pub max_parallel: usize,
    pub requests_per_minute: u32,
    pub max_retries: u32,
    pub cache: bool,
    pub retrieval: RetrievalConfig,
    pub eval: EvalConfig,
    pub split: [f64; 3],
}

impl Default for WorkspaceConfig {
    fn default() -> Self {
        Self {
            workspace_dir: PathBuf::from("workspace"),
            backend: BackendChoice::Mock,
            endpoint: "http://localhost:8080/v1/chat/completions".into(),
            input: None,
            input_format: InputFormat::Jsonl,
            models: RoleModels::default(),
            thresholds: SynthesisThresholds::default(),
            discovery: DiscoveryConfig::default(),
            max_parallel: 8,
            requests_per_minute: GatewayConfig::default().requests_per_minute,
            max_retries: GatewayConfig::default().max_retries,
            cache: true,
            retrieval: RetrievalConfig::default(),
            eval: EvalConfig::default(),
            split: corpus::DEFAULT_FRACTIONS,
        }
    }
}

impl WorkspaceConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, WorkspaceError> {
        let cfg: Self = toml::from_str(text).map_err(|e| WorkspaceError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, WorkspaceError> {
        let text = fs::read_to_string(path)
            .map_err(|e| WorkspaceError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Seed for discovery and subcategory sampling.
    pub fn set_seed(&mut self, seed: u64) {
        self.discovery.seed = seed;
    }

    pub fn validate(&self) -> Result<(), WorkspaceError> {
        let bad = |m: String| Err(WorkspaceError::Config(m));
        if let Err(e) = self.thresholds.validate() {
            return bad(e);
        }
        if self.discovery.sample_size == 0 || self.discovery.batch_size == 0 {
            return bad("discovery sample_size and batch_size must be at least 1".into());
        }
        if !(1..=256).contains(&self.max_parallel) {
            return bad(format!("max_parallel must be in 1..=256, got {}", self.max_parallel));
        }
        if self.requests_per_minute == 0 {
            return bad("requests_per_minute must be at least 1".into());
        }
        if self.max_retries > 10 {
            return bad(format!("max_retries must be at most 10, got {}", self.max_retries));
        }
        if !(1..=1000).contains(&self.retrieval.k) {
            return bad(format!("retrieval.k must be in 1..=1000, got {}", self.retrieval.k));
        }
        if !(self.retrieval.k1.is_finite() && self.retrieval.k1 >= 0.0) {
            return bad(format!("retrieval.k1 must be non-negative, got {}", self.retrieval.k1));
        }
        if !(0.0..=1.0).contains(&self.retrieval.b) {
            return bad(format!("retrieval.b must be in [0, 1], got {}", self.retrieval.b));
        }
        if !(1..=20).contains(&self.eval.runs) {
            return bad(format!("eval.runs must be in 1..=20, got {}", self.eval.runs));
        }
        if self.eval.methods.is_empty() {
            return bad("eval.methods must name at least one method".into());
        }
        for m in &self.eval.methods {
            if !METHODS.contains(&m.as_str()) {
                return bad(format!("unknown method `{m}` (expected one of {})", METHODS.join(", ")));
            }
        }
        let sum: f64 = self.split.iter().sum();
        if self.split.iter().any(|f| !f.is_finite() || *f < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions {:?} must be non-negative and sum to 1", self.split));
        }
        if self.backend == BackendChoice::Http && self.endpoint.trim().is_empty() {
            return bad("the http backend needs an endpoint".into());
        }
        Ok(())
    }

    /// Methods in canonical order, without duplicates.
    pub fn methods(&self) -> Vec<&'static str> {
        METHODS.iter().copied().filter(|m| self.eval.methods.iter().any(|x| x == m)).collect()
    }

    /// Knowledge bases the selected methods need.
    pub fn kb_labels(&self) -> Vec<&'static str> {
        let mut need = BTreeSet::new();
        for m in self.methods() {
            if m == "multi_level" {
                need.insert("per_ticket");
                need.insert("multi_agent");
            } else {
                need.insert(m);
            }
        }
        METHODS.iter().copied().filter(|m| need.contains(m)).collect()
    }

    fn needs_synthesis(&self) -> bool {
        self.kb_labels().contains(&"multi_agent")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    Split,
    Discover,
    Categorize,
    Synthesize,
    Index,
    GenQueries,
    Answer,
    Judge,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Ingest,
        Stage::Split,
        Stage::Discover,
        Stage::Categorize,
        Stage::Synthesize,
        Stage::Index,
        Stage::GenQueries,
        Stage::Answer,
        Stage::Judge,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Split => "split",
            Stage::Discover => "discover",
            Stage::Categorize => "categorize",
            Stage::Synthesize => "synthesize",
            Stage::Index => "index",
            Stage::GenQueries => "gen-queries",
            Stage::Answer => "answer",
            Stage::Judge => "judge",
            Stage::Report => "report",
        }
    }

    /// Stages whose outputs this stage reads.
    pub fn upstream(self, config: &WorkspaceConfig) -> Vec<Stage> {
        match self {
            Stage::Ingest => vec![],
            Stage::Split => vec![Stage::Ingest],
            Stage::Discover => vec![Stage::Ingest, Stage::Split],
            Stage::Categorize => vec![Stage::Ingest, Stage::Split, Stage::Discover],
            Stage::Synthesize => vec![Stage::Ingest, Stage::Split, Stage::Discover, Stage::Categorize],
            Stage::Index if config.needs_synthesis() => vec![Stage::Ingest, Stage::Split, Stage::Synthesize],
            Stage::Index => vec![Stage::Ingest, Stage::Split],
            Stage::GenQueries => vec![Stage::Ingest, Stage::Split],
            Stage::Answer => vec![Stage::Index, Stage::GenQueries],
            Stage::Judge => vec![Stage::Ingest, Stage::GenQueries, Stage::Answer],
            Stage::Report => vec![Stage::Index, Stage::Judge],
        }
    }

    /// The artifact whose presence marks the stage as done.
    pub fn primary_output(self) -> &'static str {
        match self {
            Stage::Ingest => "corpus/tickets.json",
            Stage::Split => "corpus/split.json",
            Stage::Discover => "categories.json",
            Stage::Categorize => "assignments.json",
            Stage::Synthesize => "kb/manifest.json",
            Stage::Index => "index/volumes.json",
            Stage::GenQueries => "eval/queries.jsonl",
            Stage::Answer => "eval/answers.jsonl",
            Stage::Judge => "eval/scores.jsonl",
            Stage::Report => "eval/report.json",
        }
    }

    // Directories whose files also belong to the stage output.
    fn output_dirs(self) -> &'static [&'static str] {
        match self {
            Stage::Synthesize => &["kb/articles"],
            Stage::Index => &["index"],
            _ => &[],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ran,
    Cached,
}

/// One journal line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageArtifact {
    pub stage: Stage,
    pub status: StageStatus,
    pub input_digests: BTreeMap<String, String>,
    pub output_path: String,
    pub output_digest: String,
    pub config_digest: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage `{stage}` needs `{missing}` to run first")]
    MissingUpstream { stage: Stage, missing: Stage },
    #[error("configuration for `{0}` changed since its last run; re-run with --force")]
    ConfigMismatch(Stage),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: Stage, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl WorkspaceError {
    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            WorkspaceError::Config(_) | WorkspaceError::ConfigMismatch(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> WorkspaceError + '_ {
    move |source| WorkspaceError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn stage_err(stage: Stage) -> impl Fn(&dyn fmt::Display) -> WorkspaceError {
    move |e| WorkspaceError::Stage {
        stage,
        message: e.to_string(),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// How a stage reacts to a config change since its last run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunPolicy {
    /// Re-run even when digests match, and ignore config changes.
    pub force: bool,
    /// Re-run on a config change instead of failing.
    pub rerun_on_config_change: bool,
}

impl RunPolicy {
    pub fn forced() -> Self {
        Self {
            force: true,
            rerun_on_config_change: true,
        }
    }
}

/// An opened workspace with a live gateway.
pub struct Workspace {
    config: WorkspaceConfig,
    root: PathBuf,
    gateway: Arc<Gateway>,
    ctx: AgentContext,
}

impl fmt::Debug for Workspace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Workspace").field("root", &self.root).finish()
    }
}

impl Workspace {
    /// Open with the backend named in the config.
    pub fn open(config: WorkspaceConfig) -> Result<Self, WorkspaceError> {
        let backend: Arc<dyn Backend> = match config.backend {
            BackendChoice::Mock => Arc::new(simulate::scripted_backend()),
            BackendChoice::Http => Arc::new(HttpBackend::from_env(config.endpoint.clone())),
        };
        Self::with_backend(config, backend)
    }

    /// Open with an explicit backend.
    pub fn with_backend(config: WorkspaceConfig, backend: Arc<dyn Backend>) -> Result<Self, WorkspaceError> {
        config.validate()?;
        let root = config.workspace_dir.clone();
        fs::create_dir_all(&root).map_err(|e| WorkspaceError::Config(format!("workspace {} is not writable: {e}", root.display())))?;
        let rpm = match config.backend {
            BackendChoice::Mock => MOCK_REQUESTS_PER_MINUTE,
            BackendChoice::Http => config.requests_per_minute,
        };
        let gw_config = GatewayConfig {
            requests_per_minute: rpm,
            max_retries: config.max_retries,
            cache_enabled: config.cache,
            cache_dir: config.cache.then(|| root.join("cache")),
            ..GatewayConfig::default()
        };
        let gateway = Arc::new(Gateway::new(backend, gw_config).map_err(io_err(&root))?);
        let mut ctx = AgentContext::new(gateway.clone()).with_max_parallel(config.max_parallel);
        ctx.models = config.models.clone();
        Ok(Self {
            config,
            root,
            gateway,
            ctx,
        })
    }

    pub fn config(&self) -> &WorkspaceConfig {
        &self.config
    }

    /// Run in-stage fan-out sequentially or in parallel.
    pub fn set_exec(&mut self, mode: ExecMode) {
        self.ctx.exec = mode;
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Journal entries in append order.
    pub fn journal(&self) -> Result<Vec<StageArtifact>, WorkspaceError> {
        let path = self.path("journal.jsonl");
        if !path.exists() {
            return Ok(vec![]);
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| WorkspaceError::Config(format!("corrupt journal line: {e}"))))
            .collect()
    }

    fn append_journal(&self, entry: &StageArtifact) -> Result<(), WorkspaceError> {
        let path = self.path("journal.jsonl");
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        let line = serde_json::to_string(entry).expect("journal entry serializes");
        writeln!(f, "{line}").map_err(io_err(&path))
    }

    /// The config slice a stage depends on.
    fn stage_config(&self, stage: Stage) -> Value {
        let c = &self.config;
        let backend = json!(c.backend);
        match stage {
            Stage::Ingest => json!({"input": c.input, "format": c.input_format}),
            Stage::Split => json!({"split": c.split}),
            Stage::Discover => json!({"backend": backend, "model": c.models.discovery, "discovery": c.discovery}),
            Stage::Categorize => json!({"backend": backend, "model": c.models.categorize}),
            Stage::Synthesize => json!({
                "backend": backend,
                "models": [c.models.synthesize, c.models.discovery, c.models.categorize],
                "thresholds": c.thresholds,
                "discovery": c.discovery,
            }),
            Stage::Index => json!({
                "backend": backend,
                "model": c.models.synthesize,
                "kbs": c.kb_labels(),
                "k1": c.retrieval.k1,
                "b": c.retrieval.b,
                "thresholds": c.thresholds,
            }),
            Stage::GenQueries => json!({"backend": backend, "model": c.models.judge}),
            Stage::Answer => json!({
                "backend": backend,
                "model": c.models.answer,
                "k": c.retrieval.k,
                "runs": c.eval.runs,
                "methods": c.methods(),
            }),
            Stage::Judge => json!({"backend": backend, "model": c.models.judge}),
            Stage::Report => json!({"methods": c.methods()}),
        }
    }

    pub fn config_digest(&self, stage: Stage) -> String {
        sha256_hex(self.stage_config(stage).to_string().as_bytes())
    }

    /// Digest over every file a stage produced.
    fn output_digest(&self, stage: Stage) -> Result<String, WorkspaceError> {
        let mut files = vec![self.path(stage.primary_output())];
        for dir in stage.output_dirs() {
            let d = self.path(dir);
            if d.is_dir() {
                let mut names: Vec<PathBuf> = fs::read_dir(&d)
                    .map_err(io_err(&d))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.is_file() && !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
                    .collect();
                names.sort();
                files.extend(names);
            }
        }
        files.dedup();
        let mut h = Sha256::new();
        for f in files {
            let bytes = fs::read(&f).map_err(io_err(&f))?;
            h.update(f.strip_prefix(&self.root).unwrap_or(&f).to_string_lossy().as_bytes());
            h.update([0]);
            h.update(Sha256::digest(&bytes));
        }
        Ok(hex::encode(h.finalize()))
    }

    fn input_digests(&self, stage: Stage) -> Result<BTreeMap<String, String>, WorkspaceError> {
        let mut out = BTreeMap::new();
        for up in stage.upstream(&self.config) {
            if !self.path(up.primary_output()).exists() {
                return Err(WorkspaceError::MissingUpstream { stage, missing: up });
            }
            out.insert(up.as_str().to_string(), self.output_digest(up)?);
        }
        if stage == Stage::Ingest {
            if let Some(input) = &self.config.input {
                let bytes = fs::read(input).map_err(io_err(input))?;
                out.insert("input".into(), sha256_hex(&bytes));
            }
        }
        Ok(out)
    }

    /// Run one stage under the default policy (no force).
    pub fn run_stage(&self, stage: Stage) -> Result<StageArtifact, WorkspaceError> {
        self.run_stage_with(stage, RunPolicy::default())
    }

    pub fn run_stage_with(&self, stage: Stage, policy: RunPolicy) -> Result<StageArtifact, WorkspaceError> {
        let started_at = Utc::now();
        let input_digests = self.input_digests(stage)?;
        let config_digest = self.config_digest(stage);
        let last = self.journal()?.into_iter().rev().find(|e| e.stage == stage);
        let output_exists = self.path(stage.primary_output()).exists();
        if let (false, Some(last), true) = (policy.force, &last, output_exists) {
            let current_output = self.output_digest(stage)?;
            if last.config_digest != config_digest && !policy.rerun_on_config_change {
                return Err(WorkspaceError::ConfigMismatch(stage));
            }
            if last.config_digest == config_digest
                && last.input_digests == input_digests
                && last.output_digest == current_output
            {
                let entry = StageArtifact {
                    stage,
                    status: StageStatus::Cached,
                    input_digests,
                    output_path: stage.primary_output().into(),
                    output_digest: current_output,
                    config_digest,
                    started_at,
                    finished_at: Utc::now(),
                };
                self.append_journal(&entry)?;
                tracing::info!("{stage}: cached");
                return Ok(entry);
            }
        }
        tracing::info!("{stage}: running");
        self.execute(stage, &config_digest)?;
        let entry = StageArtifact {
            stage,
            status: StageStatus::Ran,
            input_digests,
            output_path: stage.primary_output().into(),
            output_digest: self.output_digest(stage)?,
            config_digest,
            started_at,
            finished_at: Utc::now(),
        };
        self.append_journal(&entry)?;
        Ok(entry)
    }

    /// Run `stages` in order.
    pub fn run_stages(&self, stages: &[Stage], policy: RunPolicy) -> Result<Vec<StageArtifact>, WorkspaceError> {
        stages.iter().map(|s| self.run_stage_with(*s, policy)).collect()
    }

    /// Stages needed to produce a report for the configured methods.
    pub fn pipeline(&self) -> Vec<Stage> {
        Stage::ALL
            .into_iter()
            .filter(|s| {
                self.config.needs_synthesis() || !matches!(s, Stage::Discover | Stage::Categorize | Stage::Synthesize)
            })
            .collect()
    }

    /// Build every knowledge base the methods need, evaluate, and report.
    pub fn compare(&mut self, methods: &[&str], force: bool) -> Result<EvalReport, WorkspaceError> {
        let mut selected = Vec::new();
        for m in methods {
            if !METHODS.contains(m) {
                return Err(WorkspaceError::Config(format!(
                    "unknown method `{m}` (expected one of {})",
                    METHODS.join(", ")
                )));
            }
            selected.push(m.to_string());
        }
        if !selected.is_empty() {
            self.config.eval.methods = selected;
        }
        let policy = RunPolicy {
            force,
            rerun_on_config_change: true,
        };
        self.run_stages(&self.pipeline(), policy)?;
        self.read_json(Stage::Report, Stage::Report.primary_output())
    }

    fn read_json<T: DeserializeOwned>(&self, stage: Stage, rel: &str) -> Result<T, WorkspaceError> {
        let path = self.path(rel);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| stage_err(stage)(&e))
    }

    fn read_jsonl<T: DeserializeOwned>(&self, stage: Stage, rel: &str) -> Result<Vec<T>, WorkspaceError> {
        let path = self.path(rel);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| stage_err(stage)(&e)))
            .collect()
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<(), WorkspaceError> {
        let path = self.path(rel);
        write_json_atomic(&path, value).map_err(io_err(&path))
    }

    fn write_jsonl<T: Serialize>(&self, rel: &str, rows: &[T]) -> Result<(), WorkspaceError> {
        let mut out = String::new();
        for r in rows {
            out.push_str(&serde_json::to_string(r).expect("row serializes"));
            out.push('\n');
        }
        let path = self.path(rel);
        write_atomic(&path, out.as_bytes()).map_err(io_err(&path))
    }

    fn tickets(&self) -> Result<Vec<Ticket>, WorkspaceError> {
        self.read_json(Stage::Ingest, Stage::Ingest.primary_output())
    }

    fn split(&self) -> Result<CorpusSplit, WorkspaceError> {
        self.read_json(Stage::Split, Stage::Split.primary_output())
    }

    fn articles(&self, manifest: &KbManifest) -> Result<Vec<KnowledgeArticle>, WorkspaceError> {
        let mut out = Vec::new();
        for id in manifest.categories.iter().flat_map(|c| &c.article_ids) {
            let path = self.path(&format!("kb/articles/{id}.md"));
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            out.push(KnowledgeArticle::from_markdown(&text).ok_or_else(|| WorkspaceError::Stage {
                stage: Stage::Index,
                message: format!("cannot parse article {}", path.display()),
            })?);
        }
        Ok(out)
    }

    fn execute(&self, stage: Stage, config_digest: &str) -> Result<(), WorkspaceError> {
        let ctx = &self.ctx;
        let err = stage_err(stage);
        match stage {
            Stage::Ingest => {
                let tickets = match &self.config.input {
                    Some(path) => {
                        let report = corpus::load_tickets(path, self.config.input_format).map_err(|e| err(&e))?;
                        for r in &report.rejections {
                            tracing::warn!("rejected record {}: {}", r.record, r.reason);
                        }
                        self.write_json("corpus/rejections.json", &report.rejections)?;
                        report.tickets
                    }
                    None => synthetic::generate(&SyntheticConfig::default()),
                };
                self.write_json(stage.primary_output(), &tickets)
            }
            Stage::Split => {
                let split = corpus::chronological_split(&self.tickets()?, self.config.split).map_err(|e| err(&e))?;
                self.write_json(stage.primary_output(), &split)
            }
            Stage::Discover => {
                let tickets = self.tickets()?;
                let train = corpus::select(&tickets, &self.split()?.train);
                let set = discovery::discover(ctx, &train, &self.config.discovery).map_err(|e| err(&e))?;
                self.write_json(stage.primary_output(), &set)
            }
            Stage::Categorize => {
                let tickets = self.tickets()?;
                let train = corpus::select(&tickets, &self.split()?.train);
                let set: CategorySet = self.read_json(stage, Stage::Discover.primary_output())?;
                let assigned = categorize::categorize_all(ctx, &train, &set);
                self.write_json(stage.primary_output(), &assigned)
            }
            Stage::Synthesize => {
                let tickets = self.tickets()?;
                let train = corpus::select(&tickets, &self.split()?.train);
                let set: CategorySet = self.read_json(stage, Stage::Discover.primary_output())?;
                let assigned: CategorizedCorpus = self.read_json(stage, Stage::Categorize.primary_output())?;
                let hier = HierarchyConfig {
                    thresholds: self.config.thresholds,
                    discovery: self.config.discovery,
                };
                let kb = synthesis::build_knowledge_base(ctx, &assigned, &set, &train, &hier, config_digest);
                let dir = self.path("kb/articles");
                let keep: BTreeSet<String> = kb.articles.iter().map(|a| format!("{}.md", a.id)).collect();
                for a in &kb.articles {
                    let p = dir.join(format!("{}.md", a.id));
                    write_atomic(&p, a.to_markdown().as_bytes()).map_err(io_err(&p))?;
                }
                if dir.is_dir() {
                    for e in fs::read_dir(&dir).map_err(io_err(&dir))?.flatten() {
                        let name = e.file_name().to_string_lossy().into_owned();
                        if !keep.contains(&name) {
                            fs::remove_file(e.path()).map_err(io_err(&e.path()))?;
                        }
                    }
                }
                self.write_json("kb/taxonomy.json", &kb.taxonomy)?;
                self.write_json(stage.primary_output(), &kb.manifest)
            }
            Stage::Index => self.build_indexes(),
            Stage::GenQueries => {
                let tickets = self.tickets()?;
                let split = self.split()?;
                let ids: Vec<String> = split.val.iter().chain(&split.test).cloned().collect();
                let held_out = corpus::select(&tickets, &ids);
                let (queries, failed) = eval::generate_queries(ctx, &held_out);
                for (id, e) in &failed {
                    tracing::warn!("no query for `{id}`: {e}");
                }
                self.write_jsonl(stage.primary_output(), &queries)
            }
            Stage::Answer => {
                let queries: Vec<EvalQuery> = self.read_jsonl(stage, Stage::GenQueries.primary_output())?;
                let mut indexes = BTreeMap::new();
                for label in self.config.kb_labels() {
                    let v: Value = self.read_json(stage, &format!("index/{label}.json"))?;
                    indexes.insert(label, SearchIndex::from_json(v).map_err(|e| err(&e))?);
                }
                let k = self.config.retrieval.k;
                let single: Vec<(&str, AnswerFn<'_>)> = self
                    .config
                    .methods()
                    .into_iter()
                    .map(|m| {
                        let f: AnswerFn<'_> = if m == "multi_level" {
                            let (pt, ma) = (&indexes["per_ticket"], &indexes["multi_agent"]);
                            Box::new(move |q: &str| {
                                rag::multi_level_answer(ctx, q, ("per_ticket", pt), ("multi_agent", ma), "multi_level")
                            })
                        } else {
                            let idx = &indexes[m];
                            Box::new(move |q: &str| rag::answer_query(ctx, idx, m, q, k))
                        };
                        (m, f)
                    })
                    .collect();
                let methods: Vec<(&str, Answerer<'_>)> = single.iter().map(|(m, f)| (*m, f.as_ref() as Answerer<'_>)).collect();
                let rows = eval::answer_all(ctx, &queries, &methods, self.config.eval.runs);
                self.write_jsonl(stage.primary_output(), &rows)
            }
            Stage::Judge => {
                let tickets = self.tickets()?;
                let by_id: BTreeMap<&str, &Ticket> = tickets.iter().map(|t| (t.id.as_str(), t)).collect();
                let queries: Vec<EvalQuery> = self.read_jsonl(stage, Stage::GenQueries.primary_output())?;
                let answers: Vec<AnswerRecord> = self.read_jsonl(stage, Stage::Answer.primary_output())?;
                let scores = eval::judge_all(ctx, &queries, &answers, &by_id);
                self.write_jsonl(stage.primary_output(), &scores)
            }
            Stage::Report => {
                let scores: Vec<EvalScore> = self.read_jsonl(stage, Stage::Judge.primary_output())?;
                let volumes: Volumes = self.read_json(stage, Stage::Index.primary_output())?;
                let methods = self.config.methods();
                let scores: Vec<EvalScore> = scores.into_iter().filter(|s| methods.contains(&s.method.as_str())).collect();
                let baseline = methods.contains(&"raw").then_some("raw");
                let mut report = eval::aggregate(&scores, baseline);
                for m in &methods {
                    if let Some(v) = volumes.method_ratio(m) {
                        report.set_volume(m, v);
                    }
                }
                let md = self.path("eval/report.md");
                write_atomic(&md, report.to_markdown().as_bytes()).map_err(io_err(&md))?;
                self.write_json(stage.primary_output(), &report)
            }
        }
    }

    fn build_indexes(&self) -> Result<(), WorkspaceError> {
        let stage = Stage::Index;
        let ctx = &self.ctx;
        let tickets = self.tickets()?;
        let train = corpus::select(&tickets, &self.split()?.train);
        let params = Bm25Params {
            k1: self.config.retrieval.k1,
            b: self.config.retrieval.b,
        };
        let corpus_chars = synthesis::corpus_chars(&train);
        let mut volumes = Volumes {
            corpus_chars,
            kbs: BTreeMap::new(),
        };
        for label in self.config.kb_labels() {
            let build = match label {
                "raw" => rag::build_raw_kb(&train),
                "per_ticket" => rag::build_per_ticket_kb(ctx, &train),
                "cluster" => {
                    let clusterer = GreedyClusterer {
                        exec: ctx.exec,
                        max_parallel: ctx.max_parallel,
                        ..GreedyClusterer::default()
                    };
                    rag::build_cluster_kb(ctx, &train, &HashedTfEmbedder::default(), &clusterer, &self.config.thresholds)
                }
                "multi_agent" => {
                    let manifest: KbManifest = self.read_json(stage, Stage::Synthesize.primary_output())?;
                    KbBuild {
                        documents: rag::documents_from_articles(&self.articles(&manifest)?),
                        ..Default::default()
                    }
                }
                other => unreachable!("unknown KB label {other}"),
            };
            let chars = build.chars();
            volumes.kbs.insert(
                label.to_string(),
                KbVolume {
                    documents: build.documents.len(),
                    chars,
                    volume_ratio: if corpus_chars == 0 { 0.0 } else { chars as f64 / corpus_chars as f64 },
                    failed: build.failed.len(),
                    noise: build.noise.len(),
                    clustered_fraction: build.clustered_fraction,
                },
            );
            let index = SearchIndex::build(build.documents, params).map_err(|e| stage_err(stage)(&e))?;
            self.write_json(&format!("index/{label}.json"), &index.to_json())?;
        }
        self.write_json(stage.primary_output(), &volumes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbVolume {
    pub documents: usize,
    pub chars: usize,
    pub volume_ratio: f64,
    pub failed: usize,
    pub noise: usize,
    pub clustered_fraction: Option<f64>,
}

/// Size of each built knowledge base against the training corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Volumes {
    pub corpus_chars: usize,
    pub kbs: BTreeMap<String, KbVolume>,
}

impl Volumes {
    /// Volume ratio of the knowledge a method retrieves from. Multi-level
    /// draws on two KBs and reports their combined size.
    pub fn method_ratio(&self, method: &str) -> Option<f64> {
        if self.corpus_chars == 0 {
            return None;
        }
        let chars = match method {
            "multi_level" => self.kbs.get("per_ticket")?.chars + self.kbs.get("multi_agent")?.chars,
            m => self.kbs.get(m)?.chars,
        };
        Some(chars as f64 / self.corpus_chars as f64)
    }
}

/// Write the bundled synthetic corpus as JSONL.
pub fn write_synthetic_corpus(path: &Path, config: &SyntheticConfig) -> Result<usize, WorkspaceError> {
    let tickets = synthetic::generate(config);
    let mut out = String::new();
    for t in &tickets {
        out.push_str(&serde_json::to_string(t).expect("ticket serializes"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes()).map_err(io_err(path))?;
    Ok(tickets.len())
}
