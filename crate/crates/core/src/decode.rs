//! The backend contract, the constrained autoregressive decode loop, and
//! language identification.
//!
//! A [`Backend`] is anything that maps (audio, token context) to a logits
//! vector; the model itself stays out of process or behind a mock. The
//! decode loop applies an optional [`VocabMask`](crate::mask::VocabMask)
//! every step by pushing disallowed logits to the most negative finite
//! float and selecting only among allowed tokens, so masked tokens can
//! never be generated.

use crate::builder::{build_cs_prompt, ConcatConfig};
use crate::mask::VocabMask;
use crate::prompt::{serialize_prompt, PromptSequence};
use crate::vocab::{LanguageCode, SpecialTokens, TokenId, Tokenizer};

/// Opaque reference to an utterance's audio, resolved by the backend
/// (a file path or a precomputed feature blob id).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AudioHandle(String);

impl AudioHandle {
    pub fn new(reference: impl Into<String>) -> Result<Self, DecodeError> {
        let reference = reference.into();
        if reference.is_empty() {
            return Err(DecodeError::EmptyAudioHandle);
        }
        Ok(Self(reference))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("backend io failure: {0}")]
    Io(String),
    #[error("backend reported error: {0}")]
    Remote(String),
    #[error("unknown audio `{0}`")]
    UnknownAudio(String),
    #[error("malformed backend context")]
    MalformedContext,
    #[error("protocol violation: {0}")]
    Protocol(String),
}

/// What a backend declares about itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendInfo {
    pub vocab_size: usize,
    pub languages: Vec<String>,
}

/// One decoder step: logits over the whole vocabulary given audio and the
/// token context so far. Implementations must be deterministic given
/// (audio, context) unless they declare otherwise.
pub trait Backend: Send + Sync {
    fn info(&self) -> Result<BackendInfo, BackendError>;

    fn step(&self, audio: &AudioHandle, context: &[TokenId]) -> Result<Vec<f32>, BackendError>;

    /// Whether concurrent `step` calls are permitted. The harness serializes
    /// calls to backends that return false.
    fn concurrent_safe(&self) -> bool {
        false
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("audio handle must be non-empty")]
    EmptyAudioHandle,
    #[error("allowed language set must be non-empty")]
    EmptyLanguageSet,
    #[error("language `{0}` not supported by the backend")]
    UnsupportedLanguage(String),
    #[error("backend returned {got} logits, expected vocab size {expected}")]
    LogitsLength { expected: usize, got: usize },
    #[error("mask sized {mask} does not match backend vocab {vocab}")]
    MaskSize { mask: usize, vocab: usize },
    #[error("prompt ({prompt} tokens) plus {new} new tokens exceeds context {limit}")]
    PromptTooLong {
        prompt: usize,
        new: usize,
        limit: usize,
    },
    #[error("prompt error: {0}")]
    Prompt(#[from] crate::prompt::PromptError),
    #[error("prompt build error: {0}")]
    Build(#[from] crate::builder::BuildError),
    #[error("backend failed after {} generated tokens (partial text: {partial_text:?}): {source}", partial_tokens.len())]
    BackendFailed {
        partial_tokens: Vec<TokenId>,
        partial_text: String,
        source: BackendError,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// LID outcome over an allowed language set, renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct LidResult {
    /// Probability per allowed language, in the allowed-set order. Sums to 1.
    pub probs: Vec<(LanguageCode, f64)>,
    pub argmax: LanguageCode,
    pub confidence: f64,
}

impl LidResult {
    pub fn prob(&self, code: &str) -> Option<f64> {
        self.probs
            .iter()
            .find(|(l, _)| l.code() == code)
            .map(|(_, p)| *p)
    }
}

/// Run language identification: one backend step with context `[<|sot|>]`,
/// then a softmax over the allowed languages' token logits. Probabilities of
/// languages outside `allowed` are implicitly zeroed by the restriction.
pub fn run_lid(
    backend: &dyn Backend,
    audio: &AudioHandle,
    allowed: &[LanguageCode],
    specials: &SpecialTokens,
) -> Result<LidResult, DecodeError> {
    if allowed.is_empty() {
        return Err(DecodeError::EmptyLanguageSet);
    }
    let info = backend.info()?;
    for lang in allowed {
        if !info.languages.iter().any(|c| c == lang.code()) {
            return Err(DecodeError::UnsupportedLanguage(lang.code().to_string()));
        }
    }
    let logits = backend.step(audio, &[specials.sot])?;
    if logits.len() != info.vocab_size {
        return Err(DecodeError::LogitsLength {
            expected: info.vocab_size,
            got: logits.len(),
        });
    }

    let raw: Vec<f64> = allowed
        .iter()
        .map(|l| logits[l.token().index()] as f64)
        .collect();
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs: Vec<(LanguageCode, f64)> = allowed
        .iter()
        .cloned()
        .zip(exps.iter().map(|e| e / sum))
        .collect();

    let (argmax, confidence) = probs
        .iter()
        .fold(None::<(&LanguageCode, f64)>, |best, (l, p)| match best {
            Some((_, bp)) if bp >= *p => best,
            _ => Some((l, *p)),
        })
        .map(|(l, p)| (l.clone(), p))
        .expect("allowed set is non-empty");

    Ok(LidResult {
        probs,
        argmax,
        confidence,
    })
}

/// Generation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeStrategy {
    Greedy,
    Beam { width: usize },
}

/// Decode-loop settings.
#[derive(Debug, Clone)]
pub struct DecodeConfig {
    pub max_new_tokens: usize,
    pub strategy: DecodeStrategy,
    pub mask: Option<VocabMask>,
    /// Total context the engine accepts (prompt plus generated tokens).
    pub context_limit: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            max_new_tokens: 224,
            strategy: DecodeStrategy::Greedy,
            mask: None,
            context_limit: 448,
        }
    }
}

/// Generated tokens (excluding the terminating `<|eot|>`) and their text.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub tokens: Vec<TokenId>,
    pub text: String,
}

/// Constrained autoregressive decode from a serialized prompt.
pub fn decode(
    backend: &dyn Backend,
    audio: &AudioHandle,
    prompt: &PromptSequence,
    cfg: &DecodeConfig,
    tokenizer: &Tokenizer,
    specials: &SpecialTokens,
) -> Result<DecodeOutput, DecodeError> {
    let info = backend.info()?;
    if let Some(mask) = &cfg.mask {
        if mask.vocab_size() != info.vocab_size {
            return Err(DecodeError::MaskSize {
                mask: mask.vocab_size(),
                vocab: info.vocab_size,
            });
        }
    }
    if let DecodeStrategy::Beam { width } = cfg.strategy {
        assert!(width >= 1, "beam width must be at least 1");
    }
    let prompt_tokens = serialize_prompt(prompt, specials)?;
    if prompt_tokens.len() + cfg.max_new_tokens > cfg.context_limit {
        return Err(DecodeError::PromptTooLong {
            prompt: prompt_tokens.len(),
            new: cfg.max_new_tokens,
            limit: cfg.context_limit,
        });
    }
    if cfg.max_new_tokens == 0 {
        return Ok(DecodeOutput {
            tokens: Vec::new(),
            text: String::new(),
        });
    }

    let generated = match cfg.strategy {
        DecodeStrategy::Greedy => {
            greedy_loop(backend, audio, &prompt_tokens, cfg, &info, specials, tokenizer)?
        }
        DecodeStrategy::Beam { width } => {
            beam_loop(backend, audio, &prompt_tokens, cfg, &info, specials, tokenizer, width)?
        }
    };

    let text_tokens: Vec<TokenId> = generated
        .iter()
        .copied()
        .filter(|&t| !tokenizer.is_special(t))
        .collect();
    Ok(DecodeOutput {
        text: tokenizer.decode(&text_tokens),
        tokens: generated,
    })
}

/// Argmax restricted to mask-allowed ids; ties go to the lowest id.
/// NaN logits are treated as the most negative finite float.
fn select_argmax(logits: &[f32], mask: Option<&VocabMask>) -> TokenId {
    let mut best: Option<(u32, f32)> = None;
    for (i, &raw) in logits.iter().enumerate() {
        let id = TokenId(i as u32);
        if let Some(m) = mask {
            if !m.is_allowed(id) {
                continue;
            }
        }
        let v = if raw.is_nan() { f32::MIN } else { raw };
        match best {
            Some((_, bv)) if bv >= v => {}
            _ => best = Some((i as u32, v)),
        }
    }
    TokenId(best.expect("non-empty logits").0)
}

fn checked_step(
    backend: &dyn Backend,
    audio: &AudioHandle,
    context: &[TokenId],
    info: &BackendInfo,
    partial: &[TokenId],
    tokenizer: &Tokenizer,
) -> Result<Vec<f32>, DecodeError> {
    let mut logits = backend
        .step(audio, context)
        .map_err(|source| DecodeError::BackendFailed {
            partial_tokens: partial.to_vec(),
            partial_text: tokenizer.decode(partial),
            source,
        })?;
    if logits.len() != info.vocab_size {
        return Err(DecodeError::LogitsLength {
            expected: info.vocab_size,
            got: logits.len(),
        });
    }
    for v in &mut logits {
        if v.is_nan() {
            *v = f32::MIN;
        }
    }
    Ok(logits)
}

fn greedy_loop(
    backend: &dyn Backend,
    audio: &AudioHandle,
    prompt_tokens: &[TokenId],
    cfg: &DecodeConfig,
    info: &BackendInfo,
    specials: &SpecialTokens,
    tokenizer: &Tokenizer,
) -> Result<Vec<TokenId>, DecodeError> {
    let mut context = prompt_tokens.to_vec();
    let mut generated = Vec::new();
    for _ in 0..cfg.max_new_tokens {
        let mut logits = checked_step(backend, audio, &context, info, &generated, tokenizer)?;
        if let Some(mask) = &cfg.mask {
            mask.apply_to_logits(&mut logits);
        }
        let next = select_argmax(&logits, cfg.mask.as_ref());
        if next == specials.eot {
            break;
        }
        generated.push(next);
        context.push(next);
    }
    Ok(generated)
}

#[derive(Clone)]
struct Hypothesis {
    tokens: Vec<TokenId>,
    score: f64,
    finished: bool,
}

#[allow(clippy::too_many_arguments)]
fn beam_loop(
    backend: &dyn Backend,
    audio: &AudioHandle,
    prompt_tokens: &[TokenId],
    cfg: &DecodeConfig,
    info: &BackendInfo,
    specials: &SpecialTokens,
    tokenizer: &Tokenizer,
    width: usize,
) -> Result<Vec<TokenId>, DecodeError> {
    let mut beams = vec![Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
        finished: false,
    }];

    for _ in 0..cfg.max_new_tokens {
        if beams.iter().all(|b| b.finished) {
            break;
        }
        let mut pool: Vec<Hypothesis> = beams.iter().filter(|b| b.finished).cloned().collect();
        for beam in beams.iter().filter(|b| !b.finished) {
            let mut context = prompt_tokens.to_vec();
            context.extend_from_slice(&beam.tokens);
            let mut logits =
                checked_step(backend, audio, &context, info, &beam.tokens, tokenizer)?;
            if let Some(mask) = &cfg.mask {
                mask.apply_to_logits(&mut logits);
            }
            // log-softmax over allowed ids only
            let allowed: Vec<(u32, f64)> = logits
                .iter()
                .enumerate()
                .filter(|(i, _)| {
                    cfg.mask
                        .as_ref()
                        .is_none_or(|m| m.is_allowed(TokenId(*i as u32)))
                })
                .map(|(i, &v)| (i as u32, v as f64))
                .collect();
            let max = allowed
                .iter()
                .map(|&(_, v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let log_z = allowed
                .iter()
                .map(|&(_, v)| (v - max).exp())
                .sum::<f64>()
                .ln()
                + max;
            let mut candidates = allowed;
            // top `width` expansions per beam: sort by logprob desc, id asc
            candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            for &(id, v) in candidates.iter().take(width) {
                let token = TokenId(id);
                let score = beam.score + (v - log_z);
                if token == specials.eot {
                    pool.push(Hypothesis {
                        tokens: beam.tokens.clone(),
                        score,
                        finished: true,
                    });
                } else {
                    let mut tokens = beam.tokens.clone();
                    tokens.push(token);
                    pool.push(Hypothesis {
                        tokens,
                        score,
                        finished: false,
                    });
                }
            }
        }
        pool.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then_with(|| a.tokens.cmp(&b.tokens))
        });
        pool.truncate(width);
        beams = pool;
    }

    beams.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    Ok(beams.remove(0).tokens)
}

/// Code-switched transcription pipeline: LID restricted to the configured
/// pair, confidence-gated prompt construction, then decode.
#[derive(Debug, Clone)]
pub struct CsTranscription {
    pub lid: LidResult,
    pub prompt: PromptSequence,
    pub output: DecodeOutput,
}

pub fn transcribe_cs(
    backend: &dyn Backend,
    audio: &AudioHandle,
    cs_cfg: &ConcatConfig,
    decode_cfg: &DecodeConfig,
    tokenizer: &Tokenizer,
    specials: &SpecialTokens,
) -> Result<CsTranscription, DecodeError> {
    let allowed = [cs_cfg.languages().0.clone(), cs_cfg.languages().1.clone()];
    let lid = run_lid(backend, audio, &allowed, specials)?;
    let prompt = build_cs_prompt(&lid, cs_cfg, specials)?;
    let output = decode(backend, audio, &prompt, decode_cfg, tokenizer, specials)?;
    Ok(CsTranscription {
        lid,
        prompt,
        output,
    })
}
