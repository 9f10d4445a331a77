//! Vocabulary manifests, special tokens, and the reference tokenizer.
//!
//! A vocabulary manifest is a line-oriented UTF-8 file describing the token
//! space of a model:
//!
//! ```text
//! vocab_size N
//! token <id> <base64-of-bytes>
//! ...
//! special <name> <id>
//! ...
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Required special
//! names are `sop`, `sot`, `eot`, `asr`, `st`, and `notimestamps`; language
//! tokens use the name form `lang:<code>` (e.g. `lang:en`). The registry
//! order is the file order of the `lang:` entries.
//!
//! The reference tokenizer encodes with greedy longest-match over the
//! manifest's token byte strings. This is deliberately simpler than a BPE
//! merge walk and is not byte-identical to any particular model's tokenizer;
//! backends may tokenize natively.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use base64::Engine as _;
use base64::engine::general_purpose::STANDARD as BASE64;

/// Index into the model vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A registered language: short code plus its language token.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LanguageCode {
    code: String,
    token: TokenId,
}

impl LanguageCode {
    pub(crate) fn from_parts(code: String, token: TokenId) -> Self {
        Self { code, token }
    }

    pub fn code(&self) -> &str {
        &self.code
    }

    pub fn token(&self) -> TokenId {
        self.token
    }
}

/// The set of languages a vocabulary declares, in manifest order.
#[derive(Debug, Clone)]
pub struct LanguageRegistry {
    ordered: Vec<LanguageCode>,
    by_code: HashMap<String, usize>,
    by_token: HashMap<u32, usize>,
}

impl LanguageRegistry {
    fn from_entries(entries: Vec<(String, TokenId)>) -> Self {
        let mut ordered = Vec::with_capacity(entries.len());
        let mut by_code = HashMap::new();
        let mut by_token = HashMap::new();
        for (code, token) in entries {
            by_code.insert(code.clone(), ordered.len());
            by_token.insert(token.0, ordered.len());
            ordered.push(LanguageCode { code, token });
        }
        Self {
            ordered,
            by_code,
            by_token,
        }
    }

    pub fn get(&self, code: &str) -> Option<&LanguageCode> {
        self.by_code.get(code).map(|&i| &self.ordered[i])
    }

    /// Like [`get`](Self::get) but produces the module error for unknown codes.
    pub fn require(&self, code: &str) -> Result<LanguageCode, VocabError> {
        self.get(code)
            .cloned()
            .ok_or_else(|| VocabError::UnknownLanguage(code.to_string()))
    }

    pub fn by_token(&self, token: TokenId) -> Option<&LanguageCode> {
        self.by_token.get(&token.0).map(|&i| &self.ordered[i])
    }

    pub fn len(&self) -> usize {
        self.ordered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordered.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LanguageCode> {
        self.ordered.iter()
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.ordered.iter().map(|l| l.code.as_str())
    }
}

/// The named control tokens of the prompt grammar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecialTokens {
    pub sop: TokenId,
    pub sot: TokenId,
    pub eot: TokenId,
    pub asr: TokenId,
    pub st: TokenId,
    pub no_timestamps: TokenId,
    /// Language code -> language token, for every registered language.
    pub languages: std::collections::BTreeMap<String, TokenId>,
}

impl SpecialTokens {
    /// True for the named control tokens and every language token.
    pub fn is_special(&self, token: TokenId) -> bool {
        token == self.sop
            || token == self.sot
            || token == self.eot
            || token == self.asr
            || token == self.st
            || token == self.no_timestamps
            || self.languages.values().any(|&t| t == token)
    }

    pub fn language_of(&self, token: TokenId) -> Option<&str> {
        self.languages
            .iter()
            .find(|(_, &t)| t == token)
            .map(|(code, _)| code.as_str())
    }
}

/// Errors from manifest loading and text encoding.
#[derive(Debug, thiserror::Error)]
pub enum VocabError {
    #[error("io error reading manifest: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed manifest at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate id {0}")]
    DuplicateId(u32),
    #[error("duplicate token bytes for id {0}")]
    DuplicateBytes(u32),
    #[error("missing special token `{0}`")]
    MissingSpecial(&'static str),
    #[error("unknown language `{0}`")]
    UnknownLanguage(String),
    #[error("text not encodable with this vocabulary at byte offset {0}")]
    Unencodable(usize),
}

fn malformed(line: usize, message: impl Into<String>) -> VocabError {
    VocabError::Malformed {
        line,
        message: message.into(),
    }
}

/// Encode/decode engine over a loaded vocabulary.
///
/// Also carries the full special-token set so mask builders and backends can
/// classify ids without threading extra tables around.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab_size: usize,
    /// Byte string per id; `None` for specials and unlisted ids.
    bytes: Vec<Option<Vec<u8>>>,
    /// Whether an id is a special token (named or language).
    special: Vec<bool>,
    /// Render name per special id ("sot", "lang:en", ...).
    special_names: HashMap<u32, String>,
    by_bytes: HashMap<Vec<u8>, u32>,
    max_token_len: usize,
    eot: TokenId,
}

impl Tokenizer {
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn eot(&self) -> TokenId {
        self.eot
    }

    pub fn is_special(&self, token: TokenId) -> bool {
        self.special.get(token.index()).copied().unwrap_or(false)
    }

    /// Byte string of a plain text token; `None` for specials and unlisted ids.
    pub fn token_bytes(&self, token: TokenId) -> Option<&[u8]> {
        self.bytes
            .get(token.index())
            .and_then(|b| b.as_deref())
    }

    pub fn special_name(&self, token: TokenId) -> Option<&str> {
        self.special_names.get(&token.0).map(|s| s.as_str())
    }

    /// Greedy longest-match encoding. Errors if some byte of `text` is not
    /// covered by any token. Never produces special tokens.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, VocabError> {
        let bytes = text.as_bytes();
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < bytes.len() {
            match self.longest_match(&bytes[pos..]) {
                Some((id, len)) => {
                    out.push(TokenId(id));
                    pos += len;
                }
                None => return Err(VocabError::Unencodable(pos)),
            }
        }
        Ok(out)
    }

    /// Like [`encode`](Self::encode) but skips bytes no token covers.
    /// Used when counting token frequencies over arbitrary corpora.
    pub fn encode_lossy(&self, text: &str) -> Vec<TokenId> {
        let bytes = text.as_bytes();
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < bytes.len() {
            match self.longest_match(&bytes[pos..]) {
                Some((id, len)) => {
                    out.push(TokenId(id));
                    pos += len;
                }
                None => pos += 1,
            }
        }
        out
    }

    fn longest_match(&self, rest: &[u8]) -> Option<(u32, usize)> {
        let cap = self.max_token_len.min(rest.len());
        for len in (1..=cap).rev() {
            if let Some(&id) = self.by_bytes.get(&rest[..len]) {
                return Some((id, len));
            }
        }
        None
    }

    /// Plain-text decode: concatenates token bytes, skipping special and
    /// unlisted ids, with lossy UTF-8 conversion.
    pub fn decode(&self, tokens: &[TokenId]) -> String {
        let mut buf = Vec::new();
        for &t in tokens {
            if let Some(b) = self.token_bytes(t) {
                buf.extend_from_slice(b);
            }
        }
        String::from_utf8_lossy(&buf).into_owned()
    }

    /// Decode including specials, rendered as `<|name|>` (language tokens as
    /// `<|code|>`). Unlisted ids render as `<|?id|>`.
    pub fn render(&self, tokens: &[TokenId]) -> String {
        let mut out = String::new();
        for &t in tokens {
            if let Some(name) = self.special_name(t) {
                let shown = name.strip_prefix("lang:").unwrap_or(name);
                out.push_str(&format!("<|{shown}|>"));
            } else if let Some(b) = self.token_bytes(t) {
                out.push_str(&String::from_utf8_lossy(b));
            } else {
                out.push_str(&format!("<|?{}|>", t.0));
            }
        }
        out
    }
}

/// Everything a manifest declares, ready for use.
#[derive(Debug, Clone)]
pub struct LoadedVocab {
    pub tokenizer: Tokenizer,
    pub specials: SpecialTokens,
    pub languages: LanguageRegistry,
}

/// Read and parse a vocabulary manifest file.
pub fn load_vocab_manifest(path: impl AsRef<Path>) -> Result<LoadedVocab, VocabError> {
    let text = std::fs::read_to_string(path)?;
    parse_vocab_manifest(&text)
}

/// Parse manifest text. See the module docs for the format.
pub fn parse_vocab_manifest(text: &str) -> Result<LoadedVocab, VocabError> {
    let mut vocab_size: Option<usize> = None;
    let mut tokens: Vec<(u32, Vec<u8>)> = Vec::new();
    let mut specials: Vec<(String, u32)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let keyword = parts.next().unwrap();
        match keyword {
            "vocab_size" => {
                if vocab_size.is_some() {
                    return Err(malformed(lineno, "repeated vocab_size"));
                }
                let n = parts
                    .next()
                    .ok_or_else(|| malformed(lineno, "vocab_size needs a value"))?;
                let n: usize = n
                    .parse()
                    .map_err(|_| malformed(lineno, format!("bad vocab_size `{n}`")))?;
                if n == 0 {
                    return Err(malformed(lineno, "vocab_size must be positive"));
                }
                vocab_size = Some(n);
            }
            "token" => {
                if vocab_size.is_none() {
                    return Err(malformed(lineno, "token line before vocab_size"));
                }
                let id = parse_id(&mut parts, lineno)?;
                let b64 = parts
                    .next()
                    .ok_or_else(|| malformed(lineno, "token line needs base64 bytes"))?;
                let bytes = BASE64
                    .decode(b64)
                    .map_err(|e| malformed(lineno, format!("bad base64: {e}")))?;
                if bytes.is_empty() {
                    return Err(malformed(lineno, "token bytes must be non-empty"));
                }
                tokens.push((id, bytes));
            }
            "special" => {
                if vocab_size.is_none() {
                    return Err(malformed(lineno, "special line before vocab_size"));
                }
                let name = parts
                    .next()
                    .ok_or_else(|| malformed(lineno, "special line needs a name"))?
                    .to_string();
                let id = parse_id(&mut parts, lineno)?;
                if specials.iter().any(|(n, _)| *n == name) {
                    return Err(malformed(lineno, format!("duplicate special name `{name}`")));
                }
                specials.push((name, id));
            }
            other => {
                return Err(malformed(lineno, format!("unknown keyword `{other}`")));
            }
        }
    }

    let vocab_size = vocab_size.ok_or_else(|| malformed(0, "missing vocab_size header"))?;

    let mut bytes_table: Vec<Option<Vec<u8>>> = vec![None; vocab_size];
    let mut special_flags = vec![false; vocab_size];
    let mut special_names = HashMap::new();
    let mut by_bytes: HashMap<Vec<u8>, u32> = HashMap::new();
    let mut max_token_len = 0;
    let mut seen = vec![false; vocab_size];

    for (id, bytes) in tokens {
        let i = id as usize;
        if i >= vocab_size {
            return Err(malformed(0, format!("token id {id} >= vocab_size {vocab_size}")));
        }
        if seen[i] {
            return Err(VocabError::DuplicateId(id));
        }
        seen[i] = true;
        if by_bytes.contains_key(&bytes) {
            return Err(VocabError::DuplicateBytes(id));
        }
        max_token_len = max_token_len.max(bytes.len());
        by_bytes.insert(bytes.clone(), id);
        bytes_table[i] = Some(bytes);
    }

    let mut lang_entries: Vec<(String, TokenId)> = Vec::new();
    let mut named: HashMap<&str, TokenId> = HashMap::new();
    for (name, id) in &specials {
        let i = *id as usize;
        if i >= vocab_size {
            return Err(malformed(0, format!("special id {id} >= vocab_size {vocab_size}")));
        }
        if seen[i] {
            return Err(VocabError::DuplicateId(*id));
        }
        seen[i] = true;
        special_flags[i] = true;
        special_names.insert(*id, name.clone());
        if let Some(code) = name.strip_prefix("lang:") {
            if code.is_empty() {
                return Err(malformed(0, "empty language code"));
            }
            lang_entries.push((code.to_string(), TokenId(*id)));
        } else {
            match name.as_str() {
                "sop" | "sot" | "eot" | "asr" | "st" | "notimestamps" => {
                    named.insert(
                        match name.as_str() {
                            "sop" => "sop",
                            "sot" => "sot",
                            "eot" => "eot",
                            "asr" => "asr",
                            "st" => "st",
                            _ => "notimestamps",
                        },
                        TokenId(*id),
                    );
                }
                // Extra named specials are permitted and treated as special ids.
                _ => {}
            }
        }
    }

    let require = |key: &'static str| -> Result<TokenId, VocabError> {
        named.get(key).copied().ok_or(VocabError::MissingSpecial(key))
    };
    let special_tokens = SpecialTokens {
        sop: require("sop")?,
        sot: require("sot")?,
        eot: require("eot")?,
        asr: require("asr")?,
        st: require("st")?,
        no_timestamps: require("notimestamps")?,
        languages: lang_entries
            .iter()
            .map(|(c, t)| (c.clone(), *t))
            .collect(),
    };
    if lang_entries.is_empty() {
        return Err(VocabError::MissingSpecial("lang:*"));
    }
    if special_tokens.languages.len() != lang_entries.len() {
        // BTreeMap collapsed a duplicate code.
        return Err(malformed(0, "duplicate language code".to_string()));
    }

    let tokenizer = Tokenizer {
        vocab_size,
        bytes: bytes_table,
        special: special_flags,
        special_names,
        by_bytes,
        max_token_len,
        eot: special_tokens.eot,
    };

    Ok(LoadedVocab {
        tokenizer,
        specials: special_tokens,
        languages: LanguageRegistry::from_entries(lang_entries),
    })
}

fn parse_id<'a>(
    parts: &mut impl Iterator<Item = &'a str>,
    lineno: usize,
) -> Result<u32, VocabError> {
    let raw = parts
        .next()
        .ok_or_else(|| malformed(lineno, "missing id"))?;
    raw.parse()
        .map_err(|_| malformed(lineno, format!("bad id `{raw}`")))
}
