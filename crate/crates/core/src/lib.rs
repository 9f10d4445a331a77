//! Gradient-free task adaptation for Whisper-style speech models.
//!
//! The library steers an encoder-decoder speech model through its decoder
//! prompt alone: task-specific prompt construction (visually-informed,
//! code-switched `concat`, and translation-via-transcription prompts),
//! decode-time vocabulary constraints, a constrained autoregressive decode
//! loop over a small backend contract, and task-appropriate scoring
//! (WER / CER / mixed error rate / BLEU), plus an evaluation harness with
//! caching and parameter sweeps.
//!
//! Model inference itself is out of scope: any engine implementing
//! [`decode::Backend`] (in-process or over the line-delimited JSON wire
//! protocol in [`wire`]) can be driven.

pub mod builder;
pub mod decode;
pub mod harness;
pub mod mask;
pub mod metrics;
pub mod prompt;
pub mod retrieval;
pub mod vocab;
pub mod wire;

pub mod backend {
    //! Backend implementations: scripted mock and external wire-protocol client.
    mod external;
    mod mock;

    pub use external::ExternalBackend;
    pub use mock::{MockBackend, MockScript};
}

pub use prompt::{PromptSequence, Task};
pub use vocab::{LanguageCode, LanguageRegistry, LoadedVocab, SpecialTokens, TokenId, Tokenizer};
