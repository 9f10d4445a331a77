//! Run orchestration: dataset manifests, run configuration, hypothesis
//! caching, sweeps, and report writing.
//!
//! Manifests are line-delimited JSON (one record per line) so large corpora
//! stream. Decode results are cached on disk keyed by a digest of everything
//! that influences them — vocabulary, backend, mask, decode settings, audio,
//! and the exact prompt token sequence — so a rerun with an unchanged
//! configuration makes zero backend calls, and sweep points whose prompts
//! coincide share cache entries. LID results are cached separately (keyed by
//! the allowed language set instead of the prompt) for the same reason.
//!
//! Reports contain no paths or timestamps, so identical runs produce
//! byte-identical report files regardless of where outputs land.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{ExternalBackend, MockBackend};
use crate::builder::{
    build_cs_prompt, build_default_prompt, build_st_prompt, build_visual_prompt, ConcatConfig,
    VisualPromptConfig,
};
use crate::decode::{
    decode, run_lid, AudioHandle, Backend, DecodeConfig, DecodeStrategy, LidResult,
};
use crate::mask::{
    build_frequency_mask, build_script_mask, load_script_specs, FrequencyMaskConfig, ScriptSpec,
    VocabMask,
};
use crate::metrics::{score_corpus, EvalPair, EvalReport, RecordFailure, ScoreTask};
use crate::prompt::{serialize_prompt, PromptSequence, Task};
use crate::retrieval::{read_embedding_file, retrieve, EmbeddingVector, ObjectIndex};
use crate::vocab::{load_vocab_manifest, LanguageCode, LoadedVocab};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("manifest invalid at line {line}: {message}")]
    ManifestInvalid { line: usize, message: String },
    #[error("config invalid: {0}")]
    ConfigInvalid(String),
    #[error("policy does not match manifest: {0}")]
    ConfigMismatch(String),
    #[error("vocabulary error: {0}")]
    Vocab(#[from] crate::vocab::VocabError),
    #[error("mask error: {0}")]
    Mask(#[from] crate::mask::MaskError),
    #[error("backend error: {0}")]
    Backend(#[from] crate::decode::BackendError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Config-or-manifest problems map to CLI exit code 2; everything else
    /// is a run error (exit code 1).
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            HarnessError::ManifestInvalid { .. }
                | HarnessError::ConfigInvalid(_)
                | HarnessError::ConfigMismatch(_)
                | HarnessError::Vocab(_)
                | HarnessError::Mask(_)
        )
    }
}

/// Task a manifest record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Asr,
    CsAsr,
    St,
}

impl TaskKind {
    pub fn score_task(self) -> ScoreTask {
        match self {
            TaskKind::Asr => ScoreTask::Asr,
            TaskKind::CsAsr => ScoreTask::CsAsr,
            TaskKind::St => ScoreTask::St,
        }
    }
}

/// One utterance: audio reference, ground-truth text, task, languages, and
/// optional frame-embedding references for visual prompting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub audio: String,
    pub reference: String,
    pub task: TaskKind,
    pub languages: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The single task all records share.
    pub fn task(&self) -> Option<TaskKind> {
        self.records.first().map(|r| r.task)
    }
}

/// Load and validate a line-delimited JSON manifest.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text)
}

pub fn parse_manifest(text: &str) -> Result<Manifest, HarnessError> {
    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord =
            serde_json::from_str(line).map_err(|e| HarnessError::ManifestInvalid {
                line: lineno,
                message: e.to_string(),
            })?;
        let invalid = |message: String| HarnessError::ManifestInvalid {
            line: lineno,
            message,
        };
        if record.id.is_empty() {
            return Err(invalid("record id must be non-empty".into()));
        }
        if !seen.insert(record.id.clone()) {
            return Err(invalid(format!("duplicate record id `{}`", record.id)));
        }
        if record.audio.is_empty() {
            return Err(invalid("audio reference must be non-empty".into()));
        }
        let need = match record.task {
            TaskKind::Asr => 1,
            TaskKind::CsAsr => 2,
            TaskKind::St => 1,
        };
        if record.languages.len() != need {
            return Err(invalid(format!(
                "task {:?} requires {} language(s), got {}",
                record.task,
                need,
                record.languages.len()
            )));
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(HarnessError::ManifestInvalid {
            line: 0,
            message: "manifest has no records".into(),
        });
    }
    let first_task = records[0].task;
    if let Some(r) = records.iter().find(|r| r.task != first_task) {
        return Err(HarnessError::ManifestInvalid {
            line: 0,
            message: format!("mixed tasks in one manifest (record `{}`)", r.id),
        });
    }
    Ok(Manifest { records })
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VocabSpec {
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    /// Scripted mock; used by all CI-grade tests.
    Mock { script: PathBuf },
    /// Spawn an engine subprocess speaking wire protocol v1 on stdio.
    ExternalCmd { command: Vec<String> },
    /// Connect to an engine over TCP.
    ExternalTcp { address: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    /// Plain `<|sot|><|lang|><|task|>` prompt; language from each record.
    Default { task: String },
    /// Visual prompt from retrieved object labels.
    Visual {
        top_k: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        separator: Option<String>,
        index: PathBuf,
        frames: PathBuf,
    },
    /// Code-switched `concat` policy with LID gating.
    Concat {
        languages: [String; 2],
        lid_threshold: f64,
    },
    /// Translation via the transcription task token.
    St { target: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskSpec {
    Script {
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<PathBuf>,
    },
    Frequency {
        corpus: PathBuf,
        percent: f64,
    },
    File {
        path: PathBuf,
    },
}

fn default_max_new_tokens() -> usize {
    224
}

fn default_strategy() -> String {
    "greedy".to_string()
}

fn default_beam_width() -> usize {
    4
}

fn default_context_limit() -> usize {
    448
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecodeSpec {
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: usize,
    #[serde(default = "default_strategy")]
    pub strategy: String,
    #[serde(default = "default_beam_width")]
    pub beam_width: usize,
    #[serde(default = "default_context_limit")]
    pub context_limit: usize,
}

impl Default for DecodeSpec {
    fn default() -> Self {
        Self {
            max_new_tokens: default_max_new_tokens(),
            strategy: default_strategy(),
            beam_width: default_beam_width(),
            context_limit: default_context_limit(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub vocab: VocabSpec,
    pub backend: BackendSpec,
    pub policy: PolicySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<MaskSpec>,
    #[serde(default)]
    pub decode: DecodeSpec,
}

/// Parse a TOML run config; relative paths resolve against the config file's
/// directory.
pub fn load_run_config(path: impl AsRef<Path>) -> Result<RunConfig, HarnessError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut cfg: RunConfig =
        toml::from_str(&text).map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&p);
        }
    };
    resolve(&mut cfg.output_dir);
    resolve(&mut cfg.vocab.manifest);
    match &mut cfg.backend {
        BackendSpec::Mock { script } => resolve(script),
        BackendSpec::ExternalCmd { .. } | BackendSpec::ExternalTcp { .. } => {}
    }
    if let PolicySpec::Visual { index, frames, .. } = &mut cfg.policy {
        resolve(index);
        resolve(frames);
    }
    match &mut cfg.mask {
        Some(MaskSpec::Script { config: Some(c), .. }) => resolve(c),
        Some(MaskSpec::Frequency { corpus, .. }) => resolve(corpus),
        Some(MaskSpec::File { path }) => resolve(path),
        _ => {}
    }
    validate_config(&cfg)?;
    Ok(cfg)
}

fn validate_config(cfg: &RunConfig) -> Result<(), HarnessError> {
    match cfg.decode.strategy.as_str() {
        "greedy" | "beam" => {}
        other => {
            return Err(HarnessError::ConfigInvalid(format!(
                "unknown decode strategy `{other}`"
            )))
        }
    }
    if cfg.decode.beam_width == 0 {
        return Err(HarnessError::ConfigInvalid("beam_width must be >= 1".into()));
    }
    if let PolicySpec::Concat { lid_threshold, languages } = &cfg.policy {
        if !(0.0..=1.0).contains(lid_threshold) {
            return Err(HarnessError::ConfigInvalid(format!(
                "lid_threshold {lid_threshold} outside [0, 1]"
            )));
        }
        if languages[0] == languages[1] {
            return Err(HarnessError::ConfigInvalid(
                "concat languages must be distinct".into(),
            ));
        }
    }
    if let PolicySpec::Visual { top_k, .. } = &cfg.policy {
        if *top_k == 0 {
            return Err(HarnessError::ConfigInvalid("top_k must be >= 1".into()));
        }
    }
    if let Some(MaskSpec::Frequency { percent, .. }) = &cfg.mask {
        if !(*percent > 0.0 && *percent <= 100.0) {
            return Err(HarnessError::ConfigInvalid(format!(
                "frequency percent {percent} outside (0, 100]"
            )));
        }
    }
    Ok(())
}

fn policy_allows(policy: &PolicySpec, task: TaskKind) -> bool {
    match (policy, task) {
        (PolicySpec::Default { task: t }, TaskKind::Asr) => t == "asr",
        (PolicySpec::Default { task: t }, TaskKind::St) => t == "st",
        (PolicySpec::Visual { .. }, TaskKind::Asr) => true,
        (PolicySpec::Concat { .. }, TaskKind::CsAsr) => true,
        (PolicySpec::St { .. }, TaskKind::St) => true,
        _ => false,
    }
}

// ---------------------------------------------------------------------------
// Digests and caching
// ---------------------------------------------------------------------------

fn hex_digest(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update((p.len() as u64).to_le_bytes());
        hasher.update(p);
    }
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Digests of everything that can influence decode output. The documented
/// cache-key recipe:
///
/// - `vocab`: SHA-256 of the vocabulary manifest file bytes
/// - `backend`: SHA-256 of the mock script bytes, or of the command line /
///   address for external engines
/// - `mask`: SHA-256 of the mask's file serialization, or `none`
/// - `decode`: the strategy, beam width, max_new_tokens and context_limit
/// - per record: the audio reference plus the serialized prompt ids
///   (decode cache) or the allowed language codes (LID cache)
#[derive(Debug, Clone)]
struct CacheKeys {
    vocab: String,
    backend: String,
    mask: String,
    decode: String,
}

impl CacheKeys {
    fn config_digest(&self) -> String {
        hex_digest(&[
            b"config|v1",
            self.vocab.as_bytes(),
            self.backend.as_bytes(),
            self.mask.as_bytes(),
            self.decode.as_bytes(),
        ])
    }

    fn lid_key(&self, audio: &str, allowed: &[LanguageCode]) -> String {
        let langs = allowed
            .iter()
            .map(|l| l.code())
            .collect::<Vec<_>>()
            .join(",");
        hex_digest(&[
            b"lid|v1",
            self.vocab.as_bytes(),
            self.backend.as_bytes(),
            audio.as_bytes(),
            langs.as_bytes(),
        ])
    }

    fn decode_key(&self, audio: &str, prompt_tokens: &[crate::vocab::TokenId]) -> String {
        let prompt = prompt_tokens
            .iter()
            .map(|t| t.0.to_string())
            .collect::<Vec<_>>()
            .join(",");
        hex_digest(&[
            b"decode|v1",
            self.vocab.as_bytes(),
            self.backend.as_bytes(),
            self.mask.as_bytes(),
            self.decode.as_bytes(),
            audio.as_bytes(),
            prompt.as_bytes(),
        ])
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CachedLid {
    v: u32,
    probs: Vec<(String, f64)>,
    argmax: String,
    confidence: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CachedDecode {
    v: u32,
    tokens: Vec<u32>,
    text: String,
}

fn cache_read<T: serde::de::DeserializeOwned>(path: &Path) -> Option<T> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn cache_write<T: Serialize>(path: &Path, value: &T) -> Result<(), std::io::Error> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, serde_json::to_string(value).expect("serializable"))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Run execution
// ---------------------------------------------------------------------------

enum PolicyEngine {
    Default {
        task: Task,
    },
    Visual {
        cfg: VisualPromptConfig,
        index: ObjectIndex,
        frames: HashMap<String, Vec<f32>>,
    },
    Concat {
        cfg: ConcatConfig,
    },
    St {
        target: String,
    },
}

struct RunContext {
    vocab: LoadedVocab,
    backend: Box<dyn Backend>,
    policy: PolicyEngine,
    decode_cfg: DecodeConfig,
    keys: CacheKeys,
    cache_dir: PathBuf,
}

fn build_backend(
    spec: &BackendSpec,
    vocab: &LoadedVocab,
) -> Result<(Box<dyn Backend>, String), HarnessError> {
    match spec {
        BackendSpec::Mock { script } => {
            let bytes = std::fs::read(script)?;
            let digest = hex_digest(&[b"mock", &bytes]);
            let backend = MockBackend::from_script_file(script, vocab)?;
            Ok((Box::new(backend), digest))
        }
        BackendSpec::ExternalCmd { command } => {
            let digest = hex_digest(&[b"cmd", command.join("\u{1f}").as_bytes()]);
            let backend = ExternalBackend::spawn(command)?;
            Ok((Box::new(backend), digest))
        }
        BackendSpec::ExternalTcp { address } => {
            let digest = hex_digest(&[b"tcp", address.as_bytes()]);
            let backend = ExternalBackend::connect(address)?;
            Ok((Box::new(backend), digest))
        }
    }
}

/// Build the mask a config asks for. Public so the CLI `build-mask`
/// subcommand shares the exact construction path.
pub fn build_mask_from_spec(
    spec: &MaskSpec,
    vocab: &LoadedVocab,
) -> Result<VocabMask, HarnessError> {
    match spec {
        MaskSpec::Script { name, config } => {
            let spec = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(path)?;
                    load_script_specs(&text)?
                        .into_iter()
                        .find(|s| s.name() == name)
                        .ok_or_else(|| {
                            HarnessError::ConfigInvalid(format!(
                                "script `{name}` not found in config"
                            ))
                        })?
                }
                None => ScriptSpec::named(name).ok_or_else(|| {
                    HarnessError::ConfigInvalid(format!(
                        "unknown script `{name}` (shipped: cjk, cyrillic, arabic)"
                    ))
                })?,
            };
            Ok(build_script_mask(&spec, &vocab.tokenizer))
        }
        MaskSpec::Frequency { corpus, percent } => {
            let text = std::fs::read_to_string(corpus)?;
            let cfg = FrequencyMaskConfig::new(*percent, text)?;
            Ok(build_frequency_mask(&cfg, &vocab.tokenizer)?)
        }
        MaskSpec::File { path } => Ok(VocabMask::read_file(path)?),
    }
}

fn build_context(cfg: &RunConfig, manifest: &Manifest) -> Result<RunContext, HarnessError> {
    let task = manifest.task().expect("non-empty manifest");
    if !policy_allows(&cfg.policy, task) {
        return Err(HarnessError::ConfigMismatch(format!(
            "policy {:?} cannot run a {:?} manifest",
            policy_name(&cfg.policy),
            task
        )));
    }

    let vocab_bytes = std::fs::read(&cfg.vocab.manifest)?;
    let vocab = load_vocab_manifest(&cfg.vocab.manifest)?;
    let (backend, backend_digest) = build_backend(&cfg.backend, &vocab)?;

    let mask = cfg
        .mask
        .as_ref()
        .map(|spec| build_mask_from_spec(spec, &vocab))
        .transpose()?;
    let mask_digest = mask
        .as_ref()
        .map_or_else(|| "none".to_string(), |m| hex_digest(&[m.to_file_string().as_bytes()]));

    let policy = match &cfg.policy {
        PolicySpec::Default { task } => PolicyEngine::Default {
            task: match task.as_str() {
                "asr" => Task::Asr,
                "st" => Task::St,
                other => {
                    return Err(HarnessError::ConfigInvalid(format!(
                        "default policy task must be asr|st, got `{other}`"
                    )))
                }
            },
        },
        PolicySpec::Visual {
            top_k,
            separator,
            index,
            frames,
        } => {
            let mut vcfg = VisualPromptConfig::new(*top_k)
                .map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?;
            if let Some(sep) = separator {
                vcfg = vcfg.with_separator(sep.clone());
            }
            let index = ObjectIndex::read_file(index)
                .map_err(|e| HarnessError::ConfigInvalid(format!("object index: {e}")))?;
            let frames = read_embedding_file(frames)
                .map_err(|e| HarnessError::ConfigInvalid(format!("frame embeddings: {e}")))?
                .into_iter()
                .collect();
            PolicyEngine::Visual {
                cfg: vcfg,
                index,
                frames,
            }
        }
        PolicySpec::Concat {
            languages,
            lid_threshold,
        } => {
            let first = vocab.languages.require(&languages[0])?;
            let second = vocab.languages.require(&languages[1])?;
            let cfg = ConcatConfig::new(first, second, *lid_threshold)
                .map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?;
            PolicyEngine::Concat { cfg }
        }
        PolicySpec::St { target } => {
            vocab.languages.require(target)?;
            for record in manifest.records() {
                if record.languages[0] != *target {
                    return Err(HarnessError::ConfigMismatch(format!(
                        "record `{}` targets `{}` but the policy targets `{target}`",
                        record.id, record.languages[0]
                    )));
                }
            }
            PolicyEngine::St {
                target: target.clone(),
            }
        }
    };

    let strategy = match cfg.decode.strategy.as_str() {
        "greedy" => DecodeStrategy::Greedy,
        "beam" => DecodeStrategy::Beam {
            width: cfg.decode.beam_width,
        },
        other => {
            return Err(HarnessError::ConfigInvalid(format!(
                "unknown decode strategy `{other}`"
            )))
        }
    };
    let decode_cfg = DecodeConfig {
        max_new_tokens: cfg.decode.max_new_tokens,
        strategy,
        mask,
        context_limit: cfg.decode.context_limit,
    };
    let decode_digest = format!(
        "strategy={:?};max={};ctx={}",
        strategy, cfg.decode.max_new_tokens, cfg.decode.context_limit
    );

    let policy_digest = serde_json::to_string(&cfg.policy).expect("serializable policy");
    let keys = CacheKeys {
        vocab: hex_digest(&[&vocab_bytes]),
        backend: backend_digest,
        mask: mask_digest,
        decode: hex_digest(&[decode_digest.as_bytes(), policy_digest.as_bytes()]),
    };

    Ok(RunContext {
        vocab,
        backend,
        policy,
        decode_cfg,
        keys,
        cache_dir: cfg.output_dir.join("cache"),
    })
}

fn policy_name(policy: &PolicySpec) -> &'static str {
    match policy {
        PolicySpec::Default { .. } => "default",
        PolicySpec::Visual { .. } => "visual",
        PolicySpec::Concat { .. } => "concat",
        PolicySpec::St { .. } => "st",
    }
}

impl RunContext {
    fn lid_cached(
        &self,
        audio: &AudioHandle,
        allowed: &[LanguageCode],
    ) -> Result<LidResult, String> {
        let key = self.keys.lid_key(audio.as_str(), allowed);
        let path = self.cache_dir.join("lid").join(format!("{key}.json"));
        if let Some(cached) = cache_read::<CachedLid>(&path) {
            if cached.v == 1 {
                let probs: Option<Vec<(LanguageCode, f64)>> = cached
                    .probs
                    .iter()
                    .map(|(code, p)| {
                        self.vocab.languages.get(code).map(|l| (l.clone(), *p))
                    })
                    .collect();
                if let (Some(probs), Some(argmax)) =
                    (probs, self.vocab.languages.get(&cached.argmax))
                {
                    return Ok(LidResult {
                        probs,
                        argmax: argmax.clone(),
                        confidence: cached.confidence,
                    });
                }
            }
        }
        let lid = run_lid(self.backend.as_ref(), audio, allowed, &self.vocab.specials)
            .map_err(|e| e.to_string())?;
        let cached = CachedLid {
            v: 1,
            probs: lid
                .probs
                .iter()
                .map(|(l, p)| (l.code().to_string(), *p))
                .collect(),
            argmax: lid.argmax.code().to_string(),
            confidence: lid.confidence,
        };
        cache_write(&path, &cached).map_err(|e| format!("cache write: {e}"))?;
        Ok(lid)
    }

    fn decode_cached(
        &self,
        audio: &AudioHandle,
        prompt: &PromptSequence,
    ) -> Result<String, String> {
        let prompt_tokens =
            serialize_prompt(prompt, &self.vocab.specials).map_err(|e| e.to_string())?;
        let key = self.keys.decode_key(audio.as_str(), &prompt_tokens);
        let path = self.cache_dir.join("decode").join(format!("{key}.json"));
        if let Some(cached) = cache_read::<CachedDecode>(&path) {
            if cached.v == 1 {
                return Ok(cached.text);
            }
        }
        let out = decode(
            self.backend.as_ref(),
            audio,
            prompt,
            &self.decode_cfg,
            &self.vocab.tokenizer,
            &self.vocab.specials,
        )
        .map_err(|e| e.to_string())?;
        let cached = CachedDecode {
            v: 1,
            tokens: out.tokens.iter().map(|t| t.0).collect(),
            text: out.text.clone(),
        };
        cache_write(&path, &cached).map_err(|e| format!("cache write: {e}"))?;
        Ok(out.text)
    }

    fn build_prompt(&self, record: &ManifestRecord) -> Result<PromptSequence, String> {
        let vocab = &self.vocab;
        match &self.policy {
            PolicyEngine::Default { task } => build_default_prompt(
                &record.languages[0],
                *task,
                &vocab.languages,
                &vocab.specials,
            )
            .map_err(|e| e.to_string()),
            PolicyEngine::Visual { cfg, index, frames } => {
                if record.frames.is_empty() {
                    return Err("record has no frame references".to_string());
                }
                let mut vectors = Vec::with_capacity(record.frames.len());
                for frame_ref in &record.frames {
                    let raw = frames
                        .get(frame_ref)
                        .ok_or_else(|| format!("frame `{frame_ref}` not in embeddings file"))?;
                    vectors.push(EmbeddingVector::new(raw.clone()).map_err(|e| e.to_string())?);
                }
                let result =
                    retrieve(&vectors, index, cfg.top_k()).map_err(|e| e.to_string())?;
                build_visual_prompt(
                    &result.labels(),
                    cfg,
                    &record.languages[0],
                    &vocab.tokenizer,
                    &vocab.languages,
                    &vocab.specials,
                )
                .map_err(|e| e.to_string())
            }
            PolicyEngine::Concat { cfg } => {
                let audio = AudioHandle::new(record.audio.clone()).map_err(|e| e.to_string())?;
                let allowed = [cfg.languages().0.clone(), cfg.languages().1.clone()];
                let lid = self.lid_cached(&audio, &allowed)?;
                build_cs_prompt(&lid, cfg, &vocab.specials).map_err(|e| e.to_string())
            }
            PolicyEngine::St { target } => {
                build_st_prompt(target, &vocab.languages, &vocab.specials)
                    .map_err(|e| e.to_string())
            }
        }
    }

    fn process(&self, record: &ManifestRecord) -> Result<EvalPair, RecordFailure> {
        let fail = |error: String| RecordFailure {
            id: record.id.clone(),
            error,
        };
        let audio = AudioHandle::new(record.audio.clone()).map_err(|e| fail(e.to_string()))?;
        let prompt = self.build_prompt(record).map_err(fail)?;
        let hypothesis = self.decode_cached(&audio, &prompt).map_err(fail)?;
        Ok(EvalPair {
            id: record.id.clone(),
            reference: record.reference.clone(),
            hypothesis,
        })
    }
}

/// The file written as `report.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct WrittenReport {
    pub report_version: u32,
    pub config_digest: String,
    #[serde(flatten)]
    pub report: EvalReport,
}

/// Observability counters for a run. Not part of the written report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunStats {
    /// Backend `step`/`info` round trips made during the run. Zero on a
    /// fully cached rerun.
    pub backend_calls: u64,
}

struct CountingBackend {
    inner: Box<dyn Backend>,
    calls: std::sync::Arc<std::sync::atomic::AtomicU64>,
}

impl Backend for CountingBackend {
    fn info(&self) -> Result<crate::decode::BackendInfo, crate::decode::BackendError> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        self.inner.info()
    }

    fn step(
        &self,
        audio: &AudioHandle,
        context: &[crate::vocab::TokenId],
    ) -> Result<Vec<f32>, crate::decode::BackendError> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        self.inner.step(audio, context)
    }

    fn concurrent_safe(&self) -> bool {
        self.inner.concurrent_safe()
    }
}

/// Evaluate a manifest under a run configuration.
///
/// Per record: build the policy prompt, decode (through the cache), then
/// score the corpus. Record failures are isolated: they are reported in the
/// result and never affect other records' scores.
pub fn run_eval(manifest: &Manifest, cfg: &RunConfig) -> Result<EvalReport, HarnessError> {
    run_eval_with_stats(manifest, cfg).map(|(report, _)| report)
}

/// Like [`run_eval`], also returning run counters.
pub fn run_eval_with_stats(
    manifest: &Manifest,
    cfg: &RunConfig,
) -> Result<(EvalReport, RunStats), HarnessError> {
    run_eval_with_dirs(manifest, cfg, &cfg.output_dir, &cfg.output_dir.join("cache"))
}

fn run_eval_with_dirs(
    manifest: &Manifest,
    cfg: &RunConfig,
    output_dir: &Path,
    cache_dir: &Path,
) -> Result<(EvalReport, RunStats), HarnessError> {
    let mut ctx = build_context(cfg, manifest)?;
    let calls = std::sync::Arc::new(std::sync::atomic::AtomicU64::new(0));
    ctx.backend = Box::new(CountingBackend {
        inner: ctx.backend,
        calls: calls.clone(),
    });
    ctx.cache_dir = cache_dir.to_path_buf();
    std::fs::create_dir_all(output_dir)?;

    let records = manifest.records();
    let workers = cfg.workers.max(1).min(records.len());
    let results: Vec<Result<EvalPair, RecordFailure>> =
        if workers > 1 && ctx.backend.concurrent_safe() {
            let next = std::sync::atomic::AtomicUsize::new(0);
            let slots: Vec<std::sync::Mutex<Option<Result<EvalPair, RecordFailure>>>> =
                records.iter().map(|_| std::sync::Mutex::new(None)).collect();
            std::thread::scope(|scope| {
                for _ in 0..workers {
                    scope.spawn(|| loop {
                        let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                        if i >= records.len() {
                            break;
                        }
                        let outcome = ctx.process(&records[i]);
                        *slots[i].lock().expect("slot") = Some(outcome);
                    });
                }
            });
            slots
                .into_iter()
                .map(|s| s.into_inner().expect("slot").expect("filled"))
                .collect()
        } else {
            records.iter().map(|r| ctx.process(r)).collect()
        };

    let mut pairs = Vec::new();
    let mut failures = Vec::new();
    for outcome in results {
        match outcome {
            Ok(pair) => pairs.push(pair),
            Err(failure) => failures.push(failure),
        }
    }

    let task = manifest.task().expect("non-empty manifest").score_task();
    let mut report = if pairs.is_empty() {
        EvalReport {
            task,
            normalization: crate::metrics::NORMALIZATION_VERSION.to_string(),
            zh_cer: None,
            en_wer: None,
            cs_mer: None,
            total_mer: None,
            corpus_bleu: None,
            utterances: Vec::new(),
            failures: Vec::new(),
        }
    } else {
        score_corpus(&pairs, task).expect("non-empty pairs")
    };
    report.failures = failures;

    let written = WrittenReport {
        report_version: REPORT_VERSION,
        config_digest: ctx.keys.config_digest(),
        report,
    };
    std::fs::write(
        output_dir.join("report.json"),
        serde_json::to_string_pretty(&written).expect("serializable report") + "\n",
    )?;
    std::fs::write(output_dir.join("report.txt"), written.report.table_string())?;
    let stats = RunStats {
        backend_calls: calls.load(std::sync::atomic::Ordering::SeqCst),
    };
    Ok((written.report, stats))
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// Which knob a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    TopK,
    LidThreshold,
    FrequencyPercent,
}

impl std::str::FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "top_k" => Ok(SweepParam::TopK),
            "lid_threshold" => Ok(SweepParam::LidThreshold),
            "frequency_percent" => Ok(SweepParam::FrequencyPercent),
            other => Err(format!(
                "unknown sweep parameter `{other}` (top_k, lid_threshold, frequency_percent)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub parameter: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct SweepRow {
    pub value: f64,
    /// The metric used for ranking (Total MER, or BLEU for ST).
    pub metric: Option<f64>,
    pub report: EvalReport,
}

#[derive(Debug, Serialize)]
pub struct SweepResult {
    pub parameter: SweepParam,
    /// Rows in input value order.
    pub rows: Vec<SweepRow>,
    /// Row indices, best first.
    pub ranking: Vec<usize>,
    /// The best (up to) three values.
    pub top3: Vec<f64>,
    /// Mean of the top-3 ranking metrics.
    pub top3_mean: Option<f64>,
    /// Pooled metric over the top-3 runs (summed errors over summed
    /// reference lengths; recomputed corpus BLEU for ST).
    pub top3_pooled: Option<f64>,
}

fn apply_sweep_value(
    cfg: &RunConfig,
    parameter: SweepParam,
    value: f64,
) -> Result<RunConfig, HarnessError> {
    let mut cfg = cfg.clone();
    match (parameter, &mut cfg.policy, &mut cfg.mask) {
        (SweepParam::TopK, PolicySpec::Visual { top_k, .. }, _) => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(HarnessError::ConfigInvalid(format!(
                    "top_k sweep value {value} is not a positive integer"
                )));
            }
            *top_k = value as usize;
        }
        (SweepParam::LidThreshold, PolicySpec::Concat { lid_threshold, .. }, _) => {
            if !(0.0..=1.0).contains(&value) {
                return Err(HarnessError::ConfigInvalid(format!(
                    "lid_threshold sweep value {value} outside [0, 1]"
                )));
            }
            *lid_threshold = value;
        }
        (SweepParam::FrequencyPercent, _, Some(MaskSpec::Frequency { percent, .. })) => {
            if !(value > 0.0 && value <= 100.0) {
                return Err(HarnessError::ConfigInvalid(format!(
                    "frequency percent sweep value {value} outside (0, 100]"
                )));
            }
            *percent = value;
        }
        (param, _, _) => {
            return Err(HarnessError::ConfigInvalid(format!(
                "sweep parameter {param:?} does not apply to this config"
            )));
        }
    }
    Ok(cfg)
}

/// Run the config once per sweep value, sharing the decode cache across
/// values, and rank the outcomes.
pub fn run_sweep(
    manifest: &Manifest,
    cfg: &RunConfig,
    sweep: &SweepSpec,
) -> Result<SweepResult, HarnessError> {
    if sweep.values.is_empty() {
        return Err(HarnessError::ConfigInvalid("sweep needs at least one value".into()));
    }
    let task = manifest.task().expect("non-empty manifest");
    let shared_cache = cfg.output_dir.join("cache");

    let mut rows = Vec::with_capacity(sweep.values.len());
    for &value in &sweep.values {
        let point_cfg = apply_sweep_value(cfg, sweep.parameter, value)?;
        let out_dir = cfg
            .output_dir
            .join("sweep")
            .join(format!("{}_{value}", param_slug(sweep.parameter)));
        let (report, _) = run_eval_with_dirs(manifest, &point_cfg, &out_dir, &shared_cache)?;
        let metric = match task {
            TaskKind::St => report.corpus_bleu,
            _ => report.total_mer,
        };
        rows.push(SweepRow {
            value,
            metric,
            report,
        });
    }

    // lower is better for error rates, higher for BLEU
    let bleu_mode = task == TaskKind::St;
    let mut ranking: Vec<usize> = (0..rows.len()).collect();
    ranking.sort_by(|&a, &b| {
        let (ma, mb) = (rows[a].metric, rows[b].metric);
        match (ma, mb) {
            (Some(x), Some(y)) => {
                if bleu_mode {
                    y.partial_cmp(&x).unwrap()
                } else {
                    x.partial_cmp(&y).unwrap()
                }
            }
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        }
    });

    let top: Vec<usize> = ranking
        .iter()
        .copied()
        .filter(|&i| rows[i].metric.is_some())
        .take(3)
        .collect();
    let top3: Vec<f64> = top.iter().map(|&i| rows[i].value).collect();
    let top3_mean = if top.is_empty() {
        None
    } else {
        Some(top.iter().map(|&i| rows[i].metric.unwrap()).sum::<f64>() / top.len() as f64)
    };
    let top3_pooled = if top.is_empty() {
        None
    } else if bleu_mode {
        let pairs: Vec<EvalPair> = top
            .iter()
            .flat_map(|&i| rows[i].report.utterances.iter())
            .map(|u| EvalPair {
                id: u.id.clone(),
                reference: u.reference.clone(),
                hypothesis: u.hypothesis.clone(),
            })
            .collect();
        let has_cjk = pairs.iter().any(|p| {
            crate::metrics::normalize(&p.reference, crate::metrics::NormalizeProfile::Mixed)
                .chars()
                .any(crate::metrics::is_cjk)
        });
        let tok = if has_cjk {
            crate::metrics::BleuTokenization::Char
        } else {
            crate::metrics::BleuTokenization::Word
        };
        Some(crate::metrics::corpus_bleu(&pairs, tok))
    } else {
        let (errors, ref_len) = top
            .iter()
            .flat_map(|&i| rows[i].report.utterances.iter())
            .fold((0usize, 0usize), |(e, r), u| {
                (e + u.stats.total_errors(), r + u.stats.ref_len)
            });
        (ref_len > 0).then(|| errors as f64 / ref_len as f64 * 100.0)
    };

    let result = SweepResult {
        parameter: sweep.parameter,
        rows,
        ranking,
        top3,
        top3_mean,
        top3_pooled,
    };
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(
        cfg.output_dir.join("sweep.json"),
        serde_json::to_string_pretty(&result).expect("serializable sweep") + "\n",
    )?;
    Ok(result)
}

fn param_slug(parameter: SweepParam) -> &'static str {
    match parameter {
        SweepParam::TopK => "top_k",
        SweepParam::LidThreshold => "lid_threshold",
        SweepParam::FrequencyPercent => "frequency_percent",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_validation() {
        let good = r#"{"id":"a","audio":"a.wav","reference":"hi","task":"asr","languages":["en"]}"#;
        let m = parse_manifest(good).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.task(), Some(TaskKind::Asr));

        let dup = format!("{good}\n{good}");
        assert!(matches!(
            parse_manifest(&dup),
            Err(HarnessError::ManifestInvalid { line: 2, .. })
        ));

        let bad_langs =
            r#"{"id":"a","audio":"a.wav","reference":"hi","task":"cs_asr","languages":["en"]}"#;
        assert!(parse_manifest(bad_langs).is_err());

        assert!(parse_manifest("").is_err());
    }

    #[test]
    fn mixed_task_manifest_rejected() {
        let text = concat!(
            r#"{"id":"a","audio":"a.wav","reference":"hi","task":"asr","languages":["en"]}"#,
            "\n",
            r#"{"id":"b","audio":"b.wav","reference":"hi","task":"st","languages":["ru"]}"#
        );
        assert!(parse_manifest(text).is_err());
    }

    #[test]
    fn sweep_param_parsing() {
        assert_eq!("top_k".parse::<SweepParam>().unwrap(), SweepParam::TopK);
        assert!("nope".parse::<SweepParam>().is_err());
    }

    #[test]
    fn config_policy_task_compatibility() {
        let concat = PolicySpec::Concat {
            languages: ["zh".into(), "en".into()],
            lid_threshold: 0.9,
        };
        assert!(policy_allows(&concat, TaskKind::CsAsr));
        assert!(!policy_allows(&concat, TaskKind::Asr));
        let default_st = PolicySpec::Default { task: "st".into() };
        assert!(policy_allows(&default_st, TaskKind::St));
        assert!(!policy_allows(&default_st, TaskKind::Asr));
    }
}
