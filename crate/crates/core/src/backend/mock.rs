//! Scripted backend for tests and offline runs.
//!
//! A mock script maps utterance ids to a LID distribution and a set of
//! emission rules keyed by the language tokens present in the prompt. At
//! each generation step the mock produces deterministic pseudo-noise over
//! the whole vocabulary with a strong peak on the scripted token, so masked
//! decoding still has a well-defined argmax when the peak is disallowed.
//!
//! Script files are JSON:
//!
//! ```json
//! {
//!   "v": 1,
//!   "utterances": {
//!     "utt-01": {
//!       "lid": {"zh": 0.95, "en": 0.05},
//!       "rules": [
//!         {"langs": ["zh", "en"], "text": "也不需要做research"},
//!         {"langs": ["zh"], "text": "也不需要做研究"}
//!       ],
//!       "default_text": "..."
//!     }
//!   }
//! }
//! ```
//!
//! Rules match the exact ordered language-token sequence of the prompt; the
//! first match wins, falling back to `default_text`/`default_tokens`, then
//! to immediate end-of-text. Emissions may also be given as raw token ids
//! with `"tokens"`.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::Deserialize;

use crate::decode::{AudioHandle, Backend, BackendError, BackendInfo};
use crate::vocab::{LoadedVocab, TokenId};

#[derive(Debug, Clone, Deserialize)]
pub struct MockScript {
    pub v: u32,
    #[serde(default)]
    pub utterances: HashMap<String, UtteranceScript>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct UtteranceScript {
    /// LID probabilities by language code. Missing languages get a
    /// negligible probability.
    #[serde(default)]
    pub lid: HashMap<String, f64>,
    #[serde(default)]
    pub rules: Vec<EmitRule>,
    #[serde(default)]
    pub default_text: Option<String>,
    #[serde(default)]
    pub default_tokens: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct EmitRule {
    /// Ordered language codes the prompt must carry, e.g. `["zh", "en"]`.
    pub langs: Vec<String>,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub tokens: Option<Vec<u32>>,
}

#[derive(Debug)]
struct CompiledUtterance {
    /// logit value per language token at the LID step
    lid_logits: Vec<(u32, f64)>,
    /// (ordered language token sequence, emission)
    rules: Vec<(Vec<u32>, Vec<TokenId>)>,
    default_emission: Vec<TokenId>,
}

/// Deterministic scripted backend. Safe for concurrent stepping.
pub struct MockBackend {
    vocab_size: usize,
    languages: Vec<String>,
    language_tokens: Vec<u32>,
    special: Vec<bool>,
    sot: u32,
    eot: u32,
    utterances: HashMap<String, CompiledUtterance>,
    calls: AtomicU64,
}

impl MockBackend {
    pub fn from_script_file(
        path: impl AsRef<Path>,
        vocab: &LoadedVocab,
    ) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| BackendError::Io(e.to_string()))?;
        let script: MockScript =
            serde_json::from_str(&text).map_err(|e| BackendError::Protocol(e.to_string()))?;
        Self::from_script(script, vocab)
    }

    pub fn from_script(script: MockScript, vocab: &LoadedVocab) -> Result<Self, BackendError> {
        if script.v != 1 {
            return Err(BackendError::Protocol(format!(
                "unsupported mock script version {}",
                script.v
            )));
        }
        let encode = |text: &str| -> Result<Vec<TokenId>, BackendError> {
            vocab
                .tokenizer
                .encode(text)
                .map_err(|e| BackendError::Protocol(format!("emission not encodable: {e}")))
        };
        let lang_token = |code: &str| -> Result<u32, BackendError> {
            vocab
                .languages
                .get(code)
                .map(|l| l.token().0)
                .ok_or_else(|| BackendError::Protocol(format!("unknown language `{code}`")))
        };

        let mut utterances = HashMap::new();
        for (id, utt) in script.utterances {
            let mut lid_logits = Vec::new();
            for (code, prob) in &utt.lid {
                lid_logits.push((lang_token(code)?, prob.max(1e-12).ln()));
            }
            lid_logits.sort_unstable_by_key(|&(t, _)| t);

            let mut rules = Vec::new();
            for rule in utt.rules {
                let langs = rule
                    .langs
                    .iter()
                    .map(|c| lang_token(c))
                    .collect::<Result<Vec<u32>, _>>()?;
                let emission = match (&rule.text, &rule.tokens) {
                    (Some(text), None) => encode(text)?,
                    (None, Some(tokens)) => tokens.iter().map(|&t| TokenId(t)).collect(),
                    _ => {
                        return Err(BackendError::Protocol(
                            "rule needs exactly one of `text` or `tokens`".to_string(),
                        ))
                    }
                };
                rules.push((langs, emission));
            }
            let default_emission = match (&utt.default_text, &utt.default_tokens) {
                (Some(text), None) => encode(text)?,
                (None, Some(tokens)) => tokens.iter().map(|&t| TokenId(t)).collect(),
                (None, None) => Vec::new(),
                _ => {
                    return Err(BackendError::Protocol(
                        "utterance needs at most one of `default_text`/`default_tokens`"
                            .to_string(),
                    ))
                }
            };
            utterances.insert(
                id,
                CompiledUtterance {
                    lid_logits,
                    rules,
                    default_emission,
                },
            );
        }

        let vocab_size = vocab.tokenizer.vocab_size();
        let special: Vec<bool> = (0..vocab_size as u32)
            .map(|i| vocab.tokenizer.is_special(TokenId(i)))
            .collect();
        Ok(Self {
            vocab_size,
            languages: vocab.languages.codes().map(str::to_string).collect(),
            language_tokens: vocab.languages.iter().map(|l| l.token().0).collect(),
            special,
            sot: vocab.specials.sot.0,
            eot: vocab.specials.eot.0,
            utterances,
            calls: AtomicU64::new(0),
        })
    }

    /// Total `step` calls served; used to verify cache hits.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn noise(&self, audio: &str, step: usize, token: usize) -> f32 {
        // splitmix64 over a composite seed; deterministic across runs
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in audio.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        let mut z = h ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (token as u64) << 1;
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        (z >> 40) as f32 / (1u64 << 24) as f32
    }
}

impl Backend for MockBackend {
    fn info(&self) -> Result<BackendInfo, BackendError> {
        Ok(BackendInfo {
            vocab_size: self.vocab_size,
            languages: self.languages.clone(),
        })
    }

    fn step(&self, audio: &AudioHandle, context: &[TokenId]) -> Result<Vec<f32>, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if context.is_empty() {
            return Err(BackendError::MalformedContext);
        }
        let utt = self
            .utterances
            .get(audio.as_str())
            .ok_or_else(|| BackendError::UnknownAudio(audio.as_str().to_string()))?;

        // LID step: context is exactly [<|sot|>]
        if context.len() == 1 && context[0].0 == self.sot {
            let mut logits = vec![-1.0e4f32; self.vocab_size];
            for &lang in &self.language_tokens {
                logits[lang as usize] = (1.0e-12f64).ln() as f32;
            }
            for &(token, logit) in &utt.lid_logits {
                logits[token as usize] = logit as f32;
            }
            return Ok(logits);
        }

        // ordered language tokens present in the context identify the prompt
        let prompt_langs: Vec<u32> = context
            .iter()
            .map(|t| t.0)
            .filter(|t| self.language_tokens.contains(t))
            .collect();
        let emission = utt
            .rules
            .iter()
            .find(|(langs, _)| *langs == prompt_langs)
            .map(|(_, e)| e)
            .unwrap_or(&utt.default_emission);

        // generated region starts after the last special token of the prompt
        let last_special = context
            .iter()
            .rposition(|t| self.special.get(t.index()).copied().unwrap_or(false))
            .ok_or(BackendError::MalformedContext)?;
        let generated = context.len() - last_special - 1;
        let target = emission
            .get(generated)
            .map_or(self.eot, |t| t.0);

        let mut logits: Vec<f32> = (0..self.vocab_size)
            .map(|i| self.noise(audio.as_str(), generated, i))
            .collect();
        logits[target as usize] = 100.0;
        Ok(logits)
    }

    fn concurrent_safe(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::parse_vocab_manifest;
    use base64::Engine as _;

    fn vocab() -> LoadedVocab {
        let b64 =
            |s: &str| base64::engine::general_purpose::STANDARD.encode(s.as_bytes());
        let words = ["hi", " ", "there", "привет"];
        let mut m = format!("vocab_size {}\n", words.len() + 8);
        for (i, s) in words.iter().enumerate() {
            m.push_str(&format!("token {i} {}\n", b64(s)));
        }
        for (j, name) in [
            "sop",
            "sot",
            "eot",
            "asr",
            "st",
            "notimestamps",
            "lang:en",
            "lang:zh",
        ]
        .iter()
        .enumerate()
        {
            m.push_str(&format!("special {name} {}\n", words.len() + j));
        }
        parse_vocab_manifest(&m).unwrap()
    }

    fn script() -> MockScript {
        serde_json::from_str(
            r#"{
                "v": 1,
                "utterances": {
                    "u1": {
                        "lid": {"en": 0.8, "zh": 0.2},
                        "rules": [{"langs": ["en"], "text": "hi there"}],
                        "default_text": "hi"
                    }
                }
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn lid_step_reflects_scripted_probs() {
        let v = vocab();
        let mock = MockBackend::from_script(script(), &v).unwrap();
        let audio = AudioHandle::new("u1").unwrap();
        let logits = mock.step(&audio, &[v.specials.sot]).unwrap();
        let en = v.languages.get("en").unwrap().token().index();
        let zh = v.languages.get("zh").unwrap().token().index();
        assert!(logits[en] > logits[zh]);
        assert_eq!(logits.len(), v.tokenizer.vocab_size());
    }

    #[test]
    fn emission_follows_matching_rule() {
        let v = vocab();
        let mock = MockBackend::from_script(script(), &v).unwrap();
        let audio = AudioHandle::new("u1").unwrap();
        let en = v.languages.get("en").unwrap().token();
        // prompt <|sot|><|en|><|asr|><|notimestamps|>
        let prompt = vec![v.specials.sot, en, v.specials.asr, v.specials.no_timestamps];
        let expected = v.tokenizer.encode("hi there").unwrap();
        let mut ctx = prompt.clone();
        for want in &expected {
            let logits = mock.step(&audio, &ctx).unwrap();
            let argmax = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, want.index());
            ctx.push(*want);
        }
        // exhausted emission peaks on eot
        let logits = mock.step(&audio, &ctx).unwrap();
        let argmax = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, v.specials.eot.index());
    }

    #[test]
    fn unknown_audio_errors() {
        let v = vocab();
        let mock = MockBackend::from_script(script(), &v).unwrap();
        let audio = AudioHandle::new("nope").unwrap();
        assert!(matches!(
            mock.step(&audio, &[v.specials.sot]),
            Err(BackendError::UnknownAudio(_))
        ));
    }

    #[test]
    fn noise_is_deterministic() {
        let v = vocab();
        let mock = MockBackend::from_script(script(), &v).unwrap();
        let a = mock.noise("u1", 3, 7);
        let b = mock.noise("u1", 3, 7);
        assert_eq!(a, b);
        assert!((0.0..1.0).contains(&a));
    }
}
