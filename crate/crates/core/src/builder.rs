//! Task-specific prompt construction policies.
//!
//! Three policies beyond the plain default prompt:
//!
//! - **visual**: retrieved object labels joined into a comma-separated list
//!   and placed in the previous-text slot ahead of the default prompt.
//! - **concat** (code-switched): two language tokens instead of one, gated
//!   by LID confidence. The model never saw dual-language prompts in
//!   training; admitting them is the point.
//! - **translation via transcription**: the `<|asr|>` task token with the
//!   *target* language's token, which steers generation into the target
//!   language where `<|st|>` collapses to English output.

use crate::decode::LidResult;
use crate::prompt::{PromptSequence, Task};
use crate::vocab::{LanguageCode, LanguageRegistry, SpecialTokens, Tokenizer};

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error("unknown language `{0}`")]
    UnknownLanguage(String),
    #[error("concat prompt needs two distinct languages")]
    DuplicateConcatLanguages,
    #[error("lid threshold must be in [0, 1], got {0}")]
    BadThreshold(f64),
    #[error("top_k must be at least 1")]
    BadTopK,
    #[error("object label list must be non-empty")]
    EmptyObjects,
    #[error("object labels not encodable: {0}")]
    Unencodable(#[from] crate::vocab::VocabError),
    #[error("prompt assembly failed: {0}")]
    Prompt(#[from] crate::prompt::PromptError),
}

/// Configuration for `concat` prompting.
///
/// The language order is the prompt order (a tuned choice, carried as data).
/// `lid_threshold` gates the fallback to a single language: at or above the
/// threshold the detected language is used alone; below it both tokens are
/// concatenated. A threshold of exactly 1.0 means "always concatenate".
#[derive(Debug, Clone, PartialEq)]
pub struct ConcatConfig {
    languages: (LanguageCode, LanguageCode),
    lid_threshold: f64,
}

impl ConcatConfig {
    pub fn new(
        first: LanguageCode,
        second: LanguageCode,
        lid_threshold: f64,
    ) -> Result<Self, BuildError> {
        if first == second {
            return Err(BuildError::DuplicateConcatLanguages);
        }
        if !(0.0..=1.0).contains(&lid_threshold) {
            return Err(BuildError::BadThreshold(lid_threshold));
        }
        Ok(Self {
            languages: (first, second),
            lid_threshold,
        })
    }

    pub fn languages(&self) -> &(LanguageCode, LanguageCode) {
        &self.languages
    }

    pub fn lid_threshold(&self) -> f64 {
        self.lid_threshold
    }
}

/// Configuration for the visually-informed prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisualPromptConfig {
    top_k: usize,
    separator: String,
}

impl VisualPromptConfig {
    pub fn new(top_k: usize) -> Result<Self, BuildError> {
        if top_k == 0 {
            return Err(BuildError::BadTopK);
        }
        Ok(Self {
            top_k,
            separator: ", ".to_string(),
        })
    }

    pub fn with_separator(mut self, separator: impl Into<String>) -> Self {
        self.separator = separator.into();
        self
    }

    pub fn top_k(&self) -> usize {
        self.top_k
    }

    pub fn separator(&self) -> &str {
        &self.separator
    }
}

/// `<|sot|><|lang|><|task|>` with no previous text.
pub fn build_default_prompt(
    language: &str,
    task: Task,
    registry: &LanguageRegistry,
    specials: &SpecialTokens,
) -> Result<PromptSequence, BuildError> {
    let lang = registry
        .get(language)
        .cloned()
        .ok_or_else(|| BuildError::UnknownLanguage(language.to_string()))?;
    Ok(PromptSequence::new(None, vec![lang], task, specials)?)
}

/// Join the first `min(top_k, available)` object labels with the separator,
/// encode them into the previous-text slot, and append the default ASR
/// prompt for `language`.
pub fn build_visual_prompt<S: AsRef<str>>(
    objects: &[S],
    cfg: &VisualPromptConfig,
    language: &str,
    tokenizer: &Tokenizer,
    registry: &LanguageRegistry,
    specials: &SpecialTokens,
) -> Result<PromptSequence, BuildError> {
    if objects.is_empty() {
        return Err(BuildError::EmptyObjects);
    }
    let lang = registry
        .get(language)
        .cloned()
        .ok_or_else(|| BuildError::UnknownLanguage(language.to_string()))?;
    let joined = objects
        .iter()
        .take(cfg.top_k)
        .map(|s| s.as_ref())
        .collect::<Vec<_>>()
        .join(&cfg.separator);
    let prev = tokenizer.encode(&joined)?;
    Ok(PromptSequence::new(
        Some(prev),
        vec![lang],
        Task::Asr,
        specials,
    )?)
}

/// Confidence-gated code-switched prompt: the detected language alone when
/// LID clears the threshold, otherwise both configured language tokens in
/// config order. Task is always ASR.
pub fn build_cs_prompt(
    lid: &LidResult,
    cfg: &ConcatConfig,
    specials: &SpecialTokens,
) -> Result<PromptSequence, BuildError> {
    let single = cfg.lid_threshold < 1.0 && lid.confidence >= cfg.lid_threshold;
    let languages = if single {
        vec![lid.argmax.clone()]
    } else {
        vec![cfg.languages.0.clone(), cfg.languages.1.clone()]
    };
    Ok(PromptSequence::new(None, languages, Task::Asr, specials)?)
}

/// Translation-through-transcription prompt: `<|sot|><|target|><|asr|>`.
pub fn build_st_prompt(
    target: &str,
    registry: &LanguageRegistry,
    specials: &SpecialTokens,
) -> Result<PromptSequence, BuildError> {
    let lang = registry
        .get(target)
        .cloned()
        .ok_or_else(|| BuildError::UnknownLanguage(target.to_string()))?;
    Ok(PromptSequence::new(None, vec![lang], Task::Asr, specials)?)
}
