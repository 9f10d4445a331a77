//! Shared helpers for integration tests.
//!
//! Each test binary compiles this module separately and uses a subset.
#![allow(dead_code)]

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;

use prompteer::decode::{AudioHandle, Backend, BackendError, BackendInfo};
use prompteer::vocab::{parse_vocab_manifest, LoadedVocab, TokenId};

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn load_fixture_vocab() -> LoadedVocab {
    prompteer::vocab::load_vocab_manifest(fixture("vocab.manifest")).expect("fixture vocab")
}

/// Build a manifest from text tokens (followed by the required specials and
/// the given language codes) and parse it.
pub fn vocab_from_tokens(tokens: &[&str], languages: &[&str]) -> LoadedVocab {
    vocab_from_byte_tokens(
        &tokens.iter().map(|t| t.as_bytes().to_vec()).collect::<Vec<_>>(),
        languages,
    )
}

pub fn vocab_from_byte_tokens(tokens: &[Vec<u8>], languages: &[&str]) -> LoadedVocab {
    let mut m = format!("vocab_size {}\n", tokens.len() + 6 + languages.len());
    for (i, bytes) in tokens.iter().enumerate() {
        m.push_str(&format!("token {i} {}\n", BASE64.encode(bytes)));
    }
    let mut id = tokens.len();
    for name in ["sop", "sot", "eot", "asr", "st", "notimestamps"] {
        m.push_str(&format!("special {name} {id}\n"));
        id += 1;
    }
    for code in languages {
        m.push_str(&format!("special lang:{code} {id}\n"));
        id += 1;
    }
    parse_vocab_manifest(&m).expect("synthetic vocab")
}

/// Deterministic backend with pseudo-random logits derived from a seed.
/// Declares every language the vocab registers.
pub struct RandomBackend {
    pub seed: u64,
    pub vocab_size: usize,
    pub languages: Vec<String>,
}

impl RandomBackend {
    pub fn new(seed: u64, vocab: &LoadedVocab) -> Self {
        Self {
            seed,
            vocab_size: vocab.tokenizer.vocab_size(),
            languages: vocab.languages.codes().map(str::to_string).collect(),
        }
    }

    fn mix(&self, a: u64, b: u64) -> u64 {
        let mut z = self
            .seed
            .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
            .wrapping_add(b.wrapping_mul(0xBF58_476D_1CE4_E5B9));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

impl Backend for RandomBackend {
    fn info(&self) -> Result<BackendInfo, BackendError> {
        Ok(BackendInfo {
            vocab_size: self.vocab_size,
            languages: self.languages.clone(),
        })
    }

    fn step(&self, audio: &AudioHandle, context: &[TokenId]) -> Result<Vec<f32>, BackendError> {
        let mut h: u64 = 0;
        for b in audio.as_str().bytes() {
            h = h.wrapping_mul(31).wrapping_add(b as u64);
        }
        for t in context {
            h = h.wrapping_mul(31).wrapping_add(t.0 as u64);
        }
        Ok((0..self.vocab_size)
            .map(|i| (self.mix(h, i as u64) >> 40) as f32 / (1u64 << 24) as f32)
            .collect())
    }

    fn concurrent_safe(&self) -> bool {
        true
    }
}
