//! Decode-time vocabulary constraints.
//!
//! A [`VocabMask`] is a bit set over the token space applied to logits each
//! decode step. Three constructors cover the constraint families used here:
//! Unicode-script masks, corpus-frequency masks, and the language restriction
//! applied at the LID step. Every mask keeps `<|eot|>` allowed and all other
//! special tokens disallowed, so constrained generation can always terminate
//! and never emits control tokens.

use std::collections::HashMap;

use base64::Engine as _;
use base64::engine::general_purpose::STANDARD as BASE64;

use crate::vocab::{LanguageCode, TokenId, Tokenizer};

#[derive(Debug, thiserror::Error)]
pub enum MaskError {
    #[error("script ranges overlap at U+{0:04X}")]
    OverlappingRanges(u32),
    #[error("script range has lo > hi (U+{0:04X}..U+{1:04X})")]
    InvertedRange(u32, u32),
    #[error("frequency percent must be in (0, 100], got {0}")]
    BadPercent(f64),
    #[error("frequency corpus produced no tokens")]
    EmptyCorpus,
    #[error("language restriction needs a non-empty set")]
    EmptyLanguageSet,
    #[error("vocab size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("malformed mask file at line {0}: {1}")]
    MalformedFile(usize, String),
    #[error("malformed script config at line {0}: {1}")]
    MalformedScriptConfig(usize, String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Allow/deny bit set over the token vocabulary.
///
/// Pure data: applying a mask never mutates it. The `<|eot|>` id travels
/// with the mask so combinators can re-assert that it stays allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabMask {
    bits: Vec<u64>,
    vocab_size: usize,
    eot: TokenId,
    description: String,
}

impl VocabMask {
    fn empty(vocab_size: usize, eot: TokenId, description: impl Into<String>) -> Self {
        Self {
            bits: vec![0; vocab_size.div_ceil(64)],
            vocab_size,
            eot,
            description: description.into(),
        }
    }

    /// Mask allowing every token.
    pub fn full(vocab_size: usize, eot: TokenId, description: impl Into<String>) -> Self {
        let mut m = Self::empty(vocab_size, eot, description);
        for w in &mut m.bits {
            *w = u64::MAX;
        }
        let tail = vocab_size % 64;
        if tail > 0 {
            *m.bits.last_mut().unwrap() = (1u64 << tail) - 1;
        }
        m
    }

    fn allow(&mut self, token: TokenId) {
        let i = token.index();
        if i < self.vocab_size {
            self.bits[i / 64] |= 1 << (i % 64);
        }
    }

    pub fn is_allowed(&self, token: TokenId) -> bool {
        let i = token.index();
        i < self.vocab_size && (self.bits[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn allowed_count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter_allowed(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.vocab_size as u32)
            .map(TokenId)
            .filter(|&t| self.is_allowed(t))
    }

    /// Set disallowed logits to the most negative finite float, which
    /// excludes them from argmax without NaN propagation.
    pub fn apply_to_logits(&self, logits: &mut [f32]) {
        for (i, logit) in logits.iter_mut().enumerate() {
            if !self.is_allowed(TokenId(i as u32)) {
                *logit = f32::MIN;
            }
        }
    }

    /// Serialize to the mask file format: a small header plus the bit words
    /// as base64 of little-endian u64s.
    pub fn to_file_string(&self) -> String {
        let mut raw = Vec::with_capacity(self.bits.len() * 8);
        for w in &self.bits {
            raw.extend_from_slice(&w.to_le_bytes());
        }
        format!(
            "vocabmask v1\nvocab_size {}\neot {}\ndescription {}\nbits {}\n",
            self.vocab_size,
            self.eot,
            self.description.replace('\n', " "),
            BASE64.encode(&raw)
        )
    }

    pub fn from_file_string(text: &str) -> Result<Self, MaskError> {
        let mut lines = text.lines().enumerate();
        let expect = |got: Option<(usize, &str)>, what: &str| -> Result<(usize, String), MaskError> {
            got.map(|(i, l)| (i + 1, l.to_string()))
                .ok_or_else(|| MaskError::MalformedFile(0, format!("missing {what}")))
        };
        let (n, header) = expect(lines.next(), "header")?;
        if header.trim() != "vocabmask v1" {
            return Err(MaskError::MalformedFile(n, "expected `vocabmask v1`".into()));
        }
        let (n, size_line) = expect(lines.next(), "vocab_size line")?;
        let vocab_size: usize = size_line
            .trim()
            .strip_prefix("vocab_size ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| MaskError::MalformedFile(n, "expected `vocab_size N`".into()))?;
        let (n, eot_line) = expect(lines.next(), "eot line")?;
        let eot: u32 = eot_line
            .trim()
            .strip_prefix("eot ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| MaskError::MalformedFile(n, "expected `eot N`".into()))?;
        let (n, desc_line) = expect(lines.next(), "description line")?;
        let description = desc_line
            .strip_prefix("description ")
            .ok_or_else(|| MaskError::MalformedFile(n, "expected `description ...`".into()))?
            .to_string();
        let (n, bits_line) = expect(lines.next(), "bits line")?;
        let b64 = bits_line
            .trim()
            .strip_prefix("bits ")
            .ok_or_else(|| MaskError::MalformedFile(n, "expected `bits ...`".into()))?;
        let raw = BASE64
            .decode(b64)
            .map_err(|e| MaskError::MalformedFile(n, format!("bad base64: {e}")))?;
        if raw.len() != vocab_size.div_ceil(64) * 8 {
            return Err(MaskError::MalformedFile(n, "bit payload length mismatch".into()));
        }
        let bits = raw
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut mask = Self {
            bits,
            vocab_size,
            eot: TokenId(eot),
            description,
        };
        mask.allow(TokenId(eot));
        Ok(mask)
    }

    pub fn write_file(&self, path: impl AsRef<std::path::Path>) -> Result<(), MaskError> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<std::path::Path>) -> Result<Self, MaskError> {
        Self::from_file_string(&std::fs::read_to_string(path)?)
    }
}

/// Named set of inclusive Unicode code-point intervals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptSpec {
    name: String,
    ranges: Vec<(u32, u32)>,
}

impl ScriptSpec {
    /// Ranges are sorted on construction; overlaps are rejected.
    pub fn new(name: impl Into<String>, mut ranges: Vec<(u32, u32)>) -> Result<Self, MaskError> {
        for &(lo, hi) in &ranges {
            if lo > hi {
                return Err(MaskError::InvertedRange(lo, hi));
            }
        }
        ranges.sort_unstable();
        for pair in ranges.windows(2) {
            if pair[1].0 <= pair[0].1 {
                return Err(MaskError::OverlappingRanges(pair[1].0));
            }
        }
        Ok(Self {
            name: name.into(),
            ranges,
        })
    }

    /// CJK unified ideographs (base + extension A) plus CJK punctuation.
    pub fn cjk() -> Self {
        Self::new("cjk", vec![(0x3000, 0x303F), (0x3400, 0x4DBF), (0x4E00, 0x9FFF)]).unwrap()
    }

    pub fn cyrillic() -> Self {
        Self::new("cyrillic", vec![(0x0400, 0x04FF), (0x0500, 0x052F)]).unwrap()
    }

    pub fn arabic() -> Self {
        Self::new("arabic", vec![(0x0600, 0x06FF), (0x0750, 0x077F)]).unwrap()
    }

    /// Look up one of the shipped specs by name.
    pub fn named(name: &str) -> Option<Self> {
        match name {
            "cjk" => Some(Self::cjk()),
            "cyrillic" => Some(Self::cyrillic()),
            "arabic" => Some(Self::arabic()),
            _ => None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn ranges(&self) -> &[(u32, u32)] {
        &self.ranges
    }

    pub fn contains(&self, c: char) -> bool {
        let cp = c as u32;
        self.ranges.iter().any(|&(lo, hi)| lo <= cp && cp <= hi)
    }
}

/// Load script specs from the text config format:
///
/// ```text
/// script cjk
/// range 4E00 9FFF
/// range 3400 4DBF
/// ```
pub fn load_script_specs(text: &str) -> Result<Vec<ScriptSpec>, MaskError> {
    let mut specs: Vec<(String, Vec<(u32, u32)>)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        match parts.next().unwrap() {
            "script" => {
                let name = parts.next().ok_or_else(|| {
                    MaskError::MalformedScriptConfig(lineno, "script needs a name".into())
                })?;
                specs.push((name.to_string(), Vec::new()));
            }
            "range" => {
                let (name_lo, name_hi) = (parts.next(), parts.next());
                let (lo, hi) = match (name_lo, name_hi) {
                    (Some(lo), Some(hi)) => (
                        u32::from_str_radix(lo, 16).map_err(|_| {
                            MaskError::MalformedScriptConfig(lineno, format!("bad hex `{lo}`"))
                        })?,
                        u32::from_str_radix(hi, 16).map_err(|_| {
                            MaskError::MalformedScriptConfig(lineno, format!("bad hex `{hi}`"))
                        })?,
                    ),
                    _ => {
                        return Err(MaskError::MalformedScriptConfig(
                            lineno,
                            "range needs `<lo-hex> <hi-hex>`".into(),
                        ))
                    }
                };
                let last = specs.last_mut().ok_or_else(|| {
                    MaskError::MalformedScriptConfig(lineno, "range before any script".into())
                })?;
                last.1.push((lo, hi));
            }
            other => {
                return Err(MaskError::MalformedScriptConfig(
                    lineno,
                    format!("unknown keyword `{other}`"),
                ));
            }
        }
    }
    specs
        .into_iter()
        .map(|(name, ranges)| ScriptSpec::new(name, ranges))
        .collect()
}

/// Allow `<|eot|>`, disallow every other special token. Shared tail of all
/// constructors.
fn finish(mask: &mut VocabMask, tokenizer: &Tokenizer) {
    for i in 0..tokenizer.vocab_size() as u32 {
        let t = TokenId(i);
        if tokenizer.is_special(t) && t != tokenizer.eot() {
            let idx = t.index();
            mask.bits[idx / 64] &= !(1 << (idx % 64));
        }
    }
    mask.allow(tokenizer.eot());
}

/// Mask admitting tokens whose text stays within a Unicode script.
///
/// A token is allowed iff its bytes decode to complete UTF-8 and every
/// alphabetic character falls inside the spec's ranges. Tokens of only
/// whitespace, digits, or punctuation are allowed; byte-fragment tokens that
/// are not valid UTF-8 on their own are disallowed.
pub fn build_script_mask(spec: &ScriptSpec, tokenizer: &Tokenizer) -> VocabMask {
    let mut mask = VocabMask::empty(
        tokenizer.vocab_size(),
        tokenizer.eot(),
        format!("script:{}", spec.name),
    );
    for i in 0..tokenizer.vocab_size() as u32 {
        let t = TokenId(i);
        let Some(bytes) = tokenizer.token_bytes(t) else {
            continue; // special or unlisted
        };
        let Ok(text) = std::str::from_utf8(bytes) else {
            continue; // partial UTF-8 fragment
        };
        if text
            .chars()
            .filter(|c| c.is_alphabetic())
            .all(|c| spec.contains(c))
        {
            mask.allow(t);
        }
    }
    finish(&mut mask, tokenizer);
    mask
}

/// Corpus-frequency constraint configuration.
#[derive(Debug, Clone)]
pub struct FrequencyMaskConfig {
    percent: f64,
    corpus: String,
}

impl FrequencyMaskConfig {
    pub fn new(percent: f64, corpus: impl Into<String>) -> Result<Self, MaskError> {
        if !(percent > 0.0 && percent <= 100.0) {
            return Err(MaskError::BadPercent(percent));
        }
        Ok(Self {
            percent,
            corpus: corpus.into(),
        })
    }

    pub fn percent(&self) -> f64 {
        self.percent
    }
}

/// Mask admitting the top K% most frequent token types of a corpus.
///
/// The corpus is tokenized with the reference tokenizer (bytes no token
/// covers are skipped); distinct observed types are ranked by count with
/// ties broken by ascending id, and the top `ceil(K% * types)` are allowed.
pub fn build_frequency_mask(
    cfg: &FrequencyMaskConfig,
    tokenizer: &Tokenizer,
) -> Result<VocabMask, MaskError> {
    let tokens = tokenizer.encode_lossy(&cfg.corpus);
    if tokens.is_empty() {
        return Err(MaskError::EmptyCorpus);
    }
    let mut counts: HashMap<u32, u64> = HashMap::new();
    for t in tokens {
        *counts.entry(t.0).or_insert(0) += 1;
    }
    let mut ranked: Vec<(u32, u64)> = counts.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let keep = ((cfg.percent / 100.0) * ranked.len() as f64).ceil() as usize;
    let keep = keep.clamp(1, ranked.len());

    let mut mask = VocabMask::empty(
        tokenizer.vocab_size(),
        tokenizer.eot(),
        format!("frequency:top{}%", cfg.percent),
    );
    for &(id, _) in ranked.iter().take(keep) {
        mask.allow(TokenId(id));
    }
    finish(&mut mask, tokenizer);
    Ok(mask)
}

/// Mask admitting exactly the given language tokens (plus `<|eot|>`).
/// Used at the LID step to zero out all other languages.
pub fn restrict_languages(
    allowed: &[LanguageCode],
    tokenizer: &Tokenizer,
) -> Result<VocabMask, MaskError> {
    if allowed.is_empty() {
        return Err(MaskError::EmptyLanguageSet);
    }
    let codes: Vec<&str> = allowed.iter().map(|l| l.code()).collect();
    let mut mask = VocabMask::empty(
        tokenizer.vocab_size(),
        tokenizer.eot(),
        format!("languages:{}", codes.join("+")),
    );
    finish(&mut mask, tokenizer);
    for lang in allowed {
        mask.allow(lang.token());
    }
    Ok(mask)
}

/// Bitwise AND of two masks. `<|eot|>` is re-asserted allowed in the result
/// so combining constraints can never produce a dead end.
pub fn intersect(a: &VocabMask, b: &VocabMask) -> Result<VocabMask, MaskError> {
    if a.vocab_size != b.vocab_size || a.eot != b.eot {
        return Err(MaskError::SizeMismatch(a.vocab_size, b.vocab_size));
    }
    let mut out = VocabMask {
        bits: a.bits.iter().zip(&b.bits).map(|(x, y)| x & y).collect(),
        vocab_size: a.vocab_size,
        eot: a.eot,
        description: format!("({}) & ({})", a.description, b.description),
    };
    out.allow(a.eot);
    Ok(out)
}
