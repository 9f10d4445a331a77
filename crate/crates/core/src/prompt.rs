//! The decoder prompt grammar.
//!
//! Serialized order is `[<|sop|> previous-text]? <|sot|> <language>{1,2}
//! <task> [<|notimestamps|>]`. The grammar deliberately admits two language
//! tokens even though single-language prompts are the usual case.

use crate::vocab::{LanguageCode, SpecialTokens, TokenId};

/// Soft limit on serialized prompt length: half of a 448-token context.
/// Previous text is truncated from the left to fit.
pub const DEFAULT_PROMPT_BUDGET: usize = 224;

/// Task token choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Asr,
    St,
}

impl Task {
    pub fn token(self, specials: &SpecialTokens) -> TokenId {
        match self {
            Task::Asr => specials.asr,
            Task::St => specials.st,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PromptError {
    #[error("prompt needs 1 or 2 languages, got {0}")]
    LanguageCount(usize),
    #[error("duplicate language `{0}` in prompt")]
    DuplicateLanguage(String),
    #[error("language `{0}` does not match the vocabulary's registration")]
    UnregisteredLanguage(String),
    #[error("previous text contains special token {0}")]
    SpecialInPreviousText(TokenId),
    #[error("prompt budget {budget} cannot hold even the control tokens ({fixed})")]
    BudgetExceeded { budget: usize, fixed: usize },
}

/// Grammar violation with the position of the first offending token.
#[derive(Debug, thiserror::Error, PartialEq)]
#[error("prompt grammar violation at index {position}: {message}")]
pub struct PromptParseError {
    pub position: usize,
    pub message: String,
}

fn parse_err(position: usize, message: impl Into<String>) -> PromptParseError {
    PromptParseError {
        position,
        message: message.into(),
    }
}

/// A validated decoder prompt.
///
/// Construction enforces the grammar invariants: 1-2 distinct registered
/// languages, no special tokens in the previous-text slot, and the serialized
/// length within budget (previous text is truncated from the left, keeping the
/// most recent tokens).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSequence {
    previous_text: Vec<TokenId>,
    languages: Vec<LanguageCode>,
    task: Task,
    no_timestamps: bool,
}

impl PromptSequence {
    pub fn new(
        previous_text: Option<Vec<TokenId>>,
        languages: Vec<LanguageCode>,
        task: Task,
        specials: &SpecialTokens,
    ) -> Result<Self, PromptError> {
        Self::with_budget(previous_text, languages, task, specials, DEFAULT_PROMPT_BUDGET)
    }

    pub fn with_budget(
        previous_text: Option<Vec<TokenId>>,
        languages: Vec<LanguageCode>,
        task: Task,
        specials: &SpecialTokens,
        budget: usize,
    ) -> Result<Self, PromptError> {
        if languages.is_empty() || languages.len() > 2 {
            return Err(PromptError::LanguageCount(languages.len()));
        }
        if languages.len() == 2 && languages[0] == languages[1] {
            return Err(PromptError::DuplicateLanguage(languages[0].code().into()));
        }
        for lang in &languages {
            match specials.languages.get(lang.code()) {
                Some(&t) if t == lang.token() => {}
                _ => return Err(PromptError::UnregisteredLanguage(lang.code().into())),
            }
        }
        let mut previous_text = previous_text.unwrap_or_default();
        for &t in &previous_text {
            if specials.is_special(t) {
                return Err(PromptError::SpecialInPreviousText(t));
            }
        }
        // sot + languages + task + notimestamps, plus sop when prev text present.
        let fixed = 1 + languages.len() + 1 + 1;
        if fixed > budget {
            return Err(PromptError::BudgetExceeded { budget, fixed });
        }
        if !previous_text.is_empty() {
            let room = budget - fixed - 1; // reserve the sop slot
            if previous_text.len() > room {
                previous_text.drain(..previous_text.len() - room);
            }
        }
        Ok(Self {
            previous_text,
            languages,
            task,
            no_timestamps: true,
        })
    }

    /// Timestamp suppression is on by default; parsing may turn it off when
    /// the token is absent.
    pub fn set_no_timestamps(&mut self, on: bool) {
        self.no_timestamps = on;
    }

    pub fn previous_text(&self) -> &[TokenId] {
        &self.previous_text
    }

    pub fn languages(&self) -> &[LanguageCode] {
        &self.languages
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn no_timestamps(&self) -> bool {
        self.no_timestamps
    }

    pub fn serialized_len(&self) -> usize {
        let sop = if self.previous_text.is_empty() { 0 } else { 1 };
        sop + self.previous_text.len()
            + 1
            + self.languages.len()
            + 1
            + usize::from(self.no_timestamps)
    }
}

/// Serialize a prompt to its token sequence. Deterministic.
pub fn serialize_prompt(
    prompt: &PromptSequence,
    specials: &SpecialTokens,
) -> Result<Vec<TokenId>, PromptError> {
    if prompt.serialized_len() > DEFAULT_PROMPT_BUDGET {
        return Err(PromptError::BudgetExceeded {
            budget: DEFAULT_PROMPT_BUDGET,
            fixed: prompt.serialized_len(),
        });
    }
    let mut out = Vec::with_capacity(prompt.serialized_len());
    if !prompt.previous_text.is_empty() {
        out.push(specials.sop);
        out.extend_from_slice(&prompt.previous_text);
    }
    out.push(specials.sot);
    for lang in &prompt.languages {
        out.push(lang.token());
    }
    out.push(prompt.task.token(specials));
    if prompt.no_timestamps {
        out.push(specials.no_timestamps);
    }
    Ok(out)
}

/// Render a prompt the way prompts are conventionally written:
/// `<|sop|>text<|sot|><|zh|><|en|><|asr|>`, omitting the always-present
/// `<|notimestamps|>` token.
pub fn display_form(
    prompt: &PromptSequence,
    specials: &SpecialTokens,
    tokenizer: &crate::vocab::Tokenizer,
) -> Result<String, PromptError> {
    let tokens: Vec<TokenId> = serialize_prompt(prompt, specials)?
        .into_iter()
        .filter(|&t| t != specials.no_timestamps)
        .collect();
    Ok(tokenizer.render(&tokens))
}

/// Parse a token sequence back into a prompt. Inverse of
/// [`serialize_prompt`] over valid prompts.
pub fn parse_prompt(
    tokens: &[TokenId],
    specials: &SpecialTokens,
) -> Result<PromptSequence, PromptParseError> {
    let mut pos = 0;
    let next = |pos: usize| -> Result<TokenId, PromptParseError> {
        tokens
            .get(pos)
            .copied()
            .ok_or_else(|| parse_err(pos, "unexpected end of prompt"))
    };

    let mut previous_text = Vec::new();
    if next(pos)? == specials.sop {
        pos += 1;
        loop {
            let t = next(pos)?;
            if t == specials.sot {
                break;
            }
            if specials.is_special(t) {
                return Err(parse_err(pos, format!("special token {t} inside previous text")));
            }
            previous_text.push(t);
            pos += 1;
        }
        if previous_text.is_empty() {
            return Err(parse_err(1, "empty previous-text block"));
        }
    }

    if next(pos)? != specials.sot {
        return Err(parse_err(pos, "expected <|sot|>"));
    }
    pos += 1;

    let mut languages: Vec<LanguageCode> = Vec::new();
    loop {
        let t = next(pos)?;
        if let Some(code) = specials.language_of(t) {
            if languages.iter().any(|l| l.token() == t) {
                return Err(parse_err(pos, format!("duplicate language `{code}`")));
            }
            if languages.len() == 2 {
                return Err(parse_err(pos, "expected task token, got a third language"));
            }
            languages.push(make_language(code, t));
            pos += 1;
        } else {
            break;
        }
    }
    if languages.is_empty() {
        return Err(parse_err(pos, "expected at least one language token"));
    }

    let t = next(pos)?;
    let task = if t == specials.asr {
        Task::Asr
    } else if t == specials.st {
        Task::St
    } else {
        return Err(parse_err(pos, "expected task token"));
    };
    pos += 1;

    let mut no_timestamps = false;
    if pos < tokens.len() && tokens[pos] == specials.no_timestamps {
        no_timestamps = true;
        pos += 1;
    }
    if pos != tokens.len() {
        return Err(parse_err(pos, "trailing tokens after prompt"));
    }

    Ok(PromptSequence {
        previous_text,
        languages,
        task,
        no_timestamps,
    })
}

// LanguageCode's fields are private to vocab; rebuild through the specials
// table, which parse_prompt already validated against.
fn make_language(code: &str, token: TokenId) -> LanguageCode {
    crate::vocab::LanguageCode::from_parts(code.to_string(), token)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::parse_vocab_manifest;
    use base64::Engine as _;

    fn b64(s: &str) -> String {
        base64::engine::general_purpose::STANDARD.encode(s.as_bytes())
    }

    fn vocab() -> crate::vocab::LoadedVocab {
        let mut m = String::from("vocab_size 20\n");
        for (i, s) in ["a", "b", "c", " "].iter().enumerate() {
            m.push_str(&format!("token {i} {}\n", b64(s)));
        }
        m.push_str("special sop 10\nspecial sot 11\nspecial eot 12\n");
        m.push_str("special asr 13\nspecial st 14\nspecial notimestamps 15\n");
        m.push_str("special lang:en 16\nspecial lang:zh 17\nspecial lang:ru 18\n");
        parse_vocab_manifest(&m).unwrap()
    }

    #[test]
    fn serialize_single_language() {
        let v = vocab();
        let en = v.languages.get("en").unwrap().clone();
        let p = PromptSequence::new(None, vec![en], Task::Asr, &v.specials).unwrap();
        let toks = serialize_prompt(&p, &v.specials).unwrap();
        assert_eq!(toks, vec![TokenId(11), TokenId(16), TokenId(13), TokenId(15)]);
    }

    #[test]
    fn serialize_dual_language_order_preserved() {
        let v = vocab();
        let zh = v.languages.get("zh").unwrap().clone();
        let en = v.languages.get("en").unwrap().clone();
        let p = PromptSequence::new(None, vec![zh, en], Task::Asr, &v.specials).unwrap();
        let toks = serialize_prompt(&p, &v.specials).unwrap();
        assert_eq!(
            toks,
            vec![TokenId(11), TokenId(17), TokenId(16), TokenId(13), TokenId(15)]
        );
    }

    #[test]
    fn serialize_with_previous_text() {
        let v = vocab();
        let en = v.languages.get("en").unwrap().clone();
        let prev = v.tokenizer.encode("ab c").unwrap();
        let p = PromptSequence::new(Some(prev.clone()), vec![en], Task::Asr, &v.specials).unwrap();
        let toks = serialize_prompt(&p, &v.specials).unwrap();
        assert_eq!(toks[0], TokenId(10));
        assert_eq!(&toks[1..1 + prev.len()], prev.as_slice());
        assert_eq!(toks[1 + prev.len()], TokenId(11));
    }

    #[test]
    fn parse_default_prompt() {
        let v = vocab();
        let p = parse_prompt(
            &[TokenId(11), TokenId(18), TokenId(13), TokenId(15)],
            &v.specials,
        )
        .unwrap();
        assert_eq!(p.languages().len(), 1);
        assert_eq!(p.languages()[0].code(), "ru");
        assert_eq!(p.task(), Task::Asr);
        assert!(p.no_timestamps());
    }

    #[test]
    fn parse_missing_language_errors_at_index_1() {
        let v = vocab();
        let err = parse_prompt(&[TokenId(11), TokenId(13)], &v.specials).unwrap_err();
        assert_eq!(err.position, 1);
    }

    #[test]
    fn prompt_budget_truncates_from_left() {
        let v = vocab();
        let en = v.languages.get("en").unwrap().clone();
        let prev: Vec<TokenId> = std::iter::repeat([TokenId(0), TokenId(1)])
            .flatten()
            .take(400)
            .collect();
        let p = PromptSequence::new(Some(prev.clone()), vec![en], Task::Asr, &v.specials).unwrap();
        assert!(p.serialized_len() <= DEFAULT_PROMPT_BUDGET);
        // most recent (rightmost) tokens kept
        let kept = p.previous_text();
        assert_eq!(kept, &prev[prev.len() - kept.len()..]);
    }

    #[test]
    fn duplicate_language_rejected() {
        let v = vocab();
        let en = v.languages.get("en").unwrap().clone();
        let err = PromptSequence::new(None, vec![en.clone(), en], Task::Asr, &v.specials)
            .unwrap_err();
        assert_eq!(err, PromptError::DuplicateLanguage("en".into()));
    }

    #[test]
    fn round_trip_dual_language_with_prev() {
        let v = vocab();
        let zh = v.languages.get("zh").unwrap().clone();
        let en = v.languages.get("en").unwrap().clone();
        let prev = v.tokenizer.encode("abc").unwrap();
        let p = PromptSequence::new(Some(prev), vec![zh, en], Task::Asr, &v.specials).unwrap();
        let toks = serialize_prompt(&p, &v.specials).unwrap();
        let q = parse_prompt(&toks, &v.specials).unwrap();
        assert_eq!(p, q);
    }
}
