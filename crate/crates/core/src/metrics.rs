//! Scoring: WER, CER, mixed error rate over script-aware tokenization, and
//! corpus BLEU.
//!
//! Mixed error rate (MER) treats each CJK character as one token and each
//! whitespace-delimited non-CJK run as one word token, so Mandarin-English
//! code-switched utterances are scored without favoring either script.
//! Corpus scoring buckets utterances by their reference script content and
//! reports per-category rates plus a pooled total, mirroring the usual
//! CS-ASR reporting layout.
//!
//! Text normalization materially affects absolute rates and is therefore
//! explicit and versioned here (see [`normalize`]); numbers produced under a
//! different normalization are not comparable.

use serde::{Deserialize, Serialize};
use unicode_properties::{GeneralCategoryGroup, UnicodeGeneralCategory};

use crate::mask::ScriptSpec;

/// Version tag of the normalization pipeline, recorded in reports.
pub const NORMALIZATION_VERSION: &str = "norm-v1";

fn cjk_spec() -> &'static ScriptSpec {
    static SPEC: std::sync::OnceLock<ScriptSpec> = std::sync::OnceLock::new();
    SPEC.get_or_init(ScriptSpec::cjk)
}

/// CJK classification shares the decode-constraint CJK ranges, so masking
/// and scoring agree on what counts as a CJK code point.
pub fn is_cjk(c: char) -> bool {
    cjk_spec().contains(c)
}

/// Normalization profile. The pipeline is currently identical across
/// profiles (the CJK rules are vacuous on pure-English text); the profile is
/// part of the API so report metadata can record intent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeProfile {
    English,
    Mandarin,
    Mixed,
}

/// Lowercase, strip punctuation (Unicode category P) except intra-word
/// apostrophes, collapse whitespace, and remove spaces between adjacent CJK
/// characters.
pub fn normalize(text: &str, _profile: NormalizeProfile) -> String {
    let lowered: Vec<char> = text.chars().flat_map(|c| c.to_lowercase()).collect();

    let mut cleaned = String::with_capacity(lowered.len());
    for (i, &c) in lowered.iter().enumerate() {
        let is_punct = c.general_category_group() == GeneralCategoryGroup::Punctuation;
        if is_punct {
            let intra_word_apostrophe = (c == '\'' || c == '\u{2019}')
                && i > 0
                && lowered[i - 1].is_alphanumeric()
                && lowered.get(i + 1).is_some_and(|n| n.is_alphanumeric());
            if intra_word_apostrophe {
                cleaned.push(c);
            } else {
                cleaned.push(' ');
            }
        } else {
            cleaned.push(c);
        }
    }

    let collapsed = cleaned.split_whitespace().collect::<Vec<_>>().join(" ");

    // drop spaces flanked by CJK on both sides
    let chars: Vec<char> = collapsed.chars().collect();
    let mut out = String::with_capacity(collapsed.len());
    for (i, &c) in chars.iter().enumerate() {
        if c == ' '
            && i > 0
            && is_cjk(chars[i - 1])
            && chars.get(i + 1).is_some_and(|&n| is_cjk(n))
        {
            continue;
        }
        out.push(c);
    }
    out
}

/// Token kind in a mixed tokenization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    CjkChar,
    Word,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixedToken {
    pub surface: String,
    pub kind: TokenKind,
}

/// Script-tagged token sequence: one token per CJK code point, one per
/// whitespace-delimited non-CJK word, in input order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MixedTokenization {
    pub tokens: Vec<MixedToken>,
}

impl MixedTokenization {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn has_kind(&self, kind: TokenKind) -> bool {
        self.tokens.iter().any(|t| t.kind == kind)
    }
}

/// Tokenize normalized text into CJK characters and words.
pub fn mixed_tokenize(text: &str) -> MixedTokenization {
    let mut tokens = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, tokens: &mut Vec<MixedToken>| {
        if !word.is_empty() {
            tokens.push(MixedToken {
                surface: std::mem::take(word),
                kind: TokenKind::Word,
            });
        }
    };
    for c in text.chars() {
        if is_cjk(c) {
            flush(&mut word, &mut tokens);
            tokens.push(MixedToken {
                surface: c.to_string(),
                kind: TokenKind::CjkChar,
            });
        } else if c.is_whitespace() {
            flush(&mut word, &mut tokens);
        } else {
            word.push(c);
        }
    }
    flush(&mut word, &mut tokens);
    MixedTokenization { tokens }
}

/// Levenshtein alignment counts against a reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditStats {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
}

impl EditStats {
    pub fn total_errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// (S + D + I) / ref_len, or `None` for an empty reference.
    pub fn error_rate(&self) -> Option<f64> {
        (self.ref_len > 0).then(|| self.total_errors() as f64 / self.ref_len as f64)
    }

    pub fn accumulate(&mut self, other: &EditStats) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.ref_len += other.ref_len;
    }
}

/// Minimal-cost alignment with unit costs. The backtrace breaks ties
/// preferring substitution over insertion over deletion, so the S/D/I
/// decomposition is deterministic.
pub fn edit_stats<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditStats {
    let n = reference.len();
    let m = hypothesis.len();
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in dp[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            dp[i][j] = sub.min(dp[i][j - 1] + 1).min(dp[i - 1][j] + 1);
        }
    }

    let mut stats = EditStats {
        ref_len: n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && reference[i - 1] == hypothesis[j - 1] && dp[i - 1][j - 1] == dp[i][j] {
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && dp[i - 1][j - 1] + 1 == dp[i][j] {
            stats.substitutions += 1;
            i -= 1;
            j -= 1;
        } else if j > 0 && dp[i][j - 1] + 1 == dp[i][j] {
            stats.insertions += 1;
            j -= 1;
        } else {
            stats.deletions += 1;
            i -= 1;
        }
    }
    stats
}

/// Reference-derived utterance bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtteranceClass {
    Mandarin,
    English,
    CodeSwitched,
}

/// Classify by the reference's mixed tokenization: CJK-only is Mandarin,
/// words-only (or empty) is English, both is code-switched.
pub fn classify(reference_tokens: &MixedTokenization) -> UtteranceClass {
    let has_cjk = reference_tokens.has_kind(TokenKind::CjkChar);
    let has_word = reference_tokens.has_kind(TokenKind::Word);
    match (has_cjk, has_word) {
        (true, false) => UtteranceClass::Mandarin,
        (true, true) => UtteranceClass::CodeSwitched,
        (false, _) => UtteranceClass::English,
    }
}

/// Scoring task; decides whether BLEU is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreTask {
    Asr,
    CsAsr,
    St,
}

/// One scored (reference, hypothesis) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalPair {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
}

impl From<(&str, &str)> for EvalPair {
    fn from((reference, hypothesis): (&str, &str)) -> Self {
        Self {
            id: String::new(),
            reference: reference.to_string(),
            hypothesis: hypothesis.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub class: UtteranceClass,
    pub reference: String,
    pub hypothesis: String,
    pub stats: EditStats,
    /// Mixed error rate of this utterance, percent.
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFailure {
    pub id: String,
    pub error: String,
}

/// Per-category error rates (percent) plus corpus metrics for a run.
///
/// Each rate is present only if its utterance class is non-empty. The total
/// MER pools edit stats over all utterances: summed errors over summed
/// reference lengths, not a mean of per-utterance rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: ScoreTask,
    pub normalization: String,
    pub zh_cer: Option<f64>,
    pub en_wer: Option<f64>,
    pub cs_mer: Option<f64>,
    pub total_mer: Option<f64>,
    pub corpus_bleu: Option<f64>,
    pub utterances: Vec<UtteranceRecord>,
    pub failures: Vec<RecordFailure>,
}

impl EvalReport {
    /// Human-readable table with the usual CS-ASR columns.
    pub fn table_string(&self) -> String {
        fn cell(v: Option<f64>) -> String {
            v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
        }
        let mut out = String::new();
        out.push_str("Zh CER   En WER   CS MER   Total MER");
        if self.corpus_bleu.is_some() {
            out.push_str("   BLEU");
        }
        out.push('\n');
        out.push_str(&format!(
            "{:<8} {:<8} {:<8} {:<9}",
            cell(self.zh_cer),
            cell(self.en_wer),
            cell(self.cs_mer),
            cell(self.total_mer),
        ));
        if let Some(bleu) = self.corpus_bleu {
            out.push_str(&format!("   {bleu:.2}"));
        }
        out.push('\n');
        out.push_str(&format!(
            "utterances: {}   failures: {}\n",
            self.utterances.len(),
            self.failures.len()
        ));
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("cannot score an empty corpus")]
    EmptyCorpus,
}

fn percent(errors: usize, ref_len: usize) -> Option<f64> {
    (ref_len > 0).then(|| errors as f64 / ref_len as f64 * 100.0)
}

/// Score a corpus: classify each reference, compute Zh CER over Mandarin
/// utterances (character tokens), En WER over English utterances (word
/// tokens), CS MER over code-switched utterances and Total MER over all
/// utterances (mixed tokens, pooled), plus corpus BLEU for `St`.
pub fn score_corpus(pairs: &[EvalPair], task: ScoreTask) -> Result<EvalReport, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }

    let mut zh = EditStats::default();
    let mut en = EditStats::default();
    let mut cs = EditStats::default();
    let mut total = EditStats::default();
    let (mut n_zh, mut n_en, mut n_cs) = (0usize, 0usize, 0usize);
    let mut utterances = Vec::with_capacity(pairs.len());

    for (i, pair) in pairs.iter().enumerate() {
        let nref = normalize(&pair.reference, NormalizeProfile::Mixed);
        let nhyp = normalize(&pair.hypothesis, NormalizeProfile::Mixed);
        let ref_mixed = mixed_tokenize(&nref);
        let hyp_mixed = mixed_tokenize(&nhyp);
        let class = classify(&ref_mixed);
        let mixed_stats = edit_stats(&ref_mixed.tokens, &hyp_mixed.tokens);
        total.accumulate(&mixed_stats);

        match class {
            UtteranceClass::Mandarin => {
                let rc: Vec<char> = nref.chars().filter(|c| !c.is_whitespace()).collect();
                let hc: Vec<char> = nhyp.chars().filter(|c| !c.is_whitespace()).collect();
                zh.accumulate(&edit_stats(&rc, &hc));
                n_zh += 1;
            }
            UtteranceClass::English => {
                let rw: Vec<&str> = nref.split_whitespace().collect();
                let hw: Vec<&str> = nhyp.split_whitespace().collect();
                en.accumulate(&edit_stats(&rw, &hw));
                n_en += 1;
            }
            UtteranceClass::CodeSwitched => {
                cs.accumulate(&mixed_stats);
                n_cs += 1;
            }
        }

        let id = if pair.id.is_empty() {
            i.to_string()
        } else {
            pair.id.clone()
        };
        utterances.push(UtteranceRecord {
            id,
            class,
            reference: pair.reference.clone(),
            hypothesis: pair.hypothesis.clone(),
            stats: mixed_stats,
            rate: percent(mixed_stats.total_errors(), mixed_stats.ref_len),
        });
    }

    let corpus_bleu_score = if task == ScoreTask::St {
        let tok = if pairs
            .iter()
            .any(|p| normalize(&p.reference, NormalizeProfile::Mixed).chars().any(is_cjk))
        {
            BleuTokenization::Char
        } else {
            BleuTokenization::Word
        };
        Some(corpus_bleu(pairs, tok))
    } else {
        None
    };

    Ok(EvalReport {
        task,
        normalization: NORMALIZATION_VERSION.to_string(),
        zh_cer: (n_zh > 0).then(|| percent(zh.total_errors(), zh.ref_len)).flatten(),
        en_wer: (n_en > 0).then(|| percent(en.total_errors(), en.ref_len)).flatten(),
        cs_mer: (n_cs > 0).then(|| percent(cs.total_errors(), cs.ref_len)).flatten(),
        total_mer: percent(total.total_errors(), total.ref_len),
        corpus_bleu: corpus_bleu_score,
        utterances,
        failures: Vec::new(),
    })
}

/// BLEU token granularity: words for space-delimited targets, characters
/// for CJK targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BleuTokenization {
    Word,
    Char,
}

/// Smoothing policy for BLEU n-gram precisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BleuSmoothing {
    /// Any zero precision zeroes the score.
    #[default]
    None,
    /// Add one to numerator and denominator for n >= 2.
    AddOne,
}

/// Corpus-level BLEU-4 in [0, 100]: geometric mean of modified n-gram
/// precisions times the brevity penalty `exp(1 - r/c)` when `c < r`.
/// Hypotheses are normalized with the shipped pipeline first.
pub fn corpus_bleu(pairs: &[EvalPair], tokenization: BleuTokenization) -> f64 {
    corpus_bleu_with(pairs, tokenization, BleuSmoothing::None)
}

pub fn corpus_bleu_with(
    pairs: &[EvalPair],
    tokenization: BleuTokenization,
    smoothing: BleuSmoothing,
) -> f64 {
    const MAX_N: usize = 4;
    let mut matched = [0u64; MAX_N];
    let mut attempted = [0u64; MAX_N];
    let mut hyp_len = 0u64;
    let mut ref_len = 0u64;

    for pair in pairs {
        let nref = normalize(&pair.reference, NormalizeProfile::Mixed);
        let nhyp = normalize(&pair.hypothesis, NormalizeProfile::Mixed);
        let ref_toks = bleu_tokens(&nref, tokenization);
        let hyp_toks = bleu_tokens(&nhyp, tokenization);
        hyp_len += hyp_toks.len() as u64;
        ref_len += ref_toks.len() as u64;
        for n in 1..=MAX_N {
            let (m, t) = clipped_ngram_matches(&ref_toks, &hyp_toks, n);
            matched[n - 1] += m;
            attempted[n - 1] += t;
        }
    }

    if hyp_len == 0 {
        return 0.0;
    }

    let mut log_sum = 0.0f64;
    for n in 0..MAX_N {
        let (m, t) = match smoothing {
            BleuSmoothing::None => (matched[n], attempted[n]),
            BleuSmoothing::AddOne if n > 0 => (matched[n] + 1, attempted[n] + 1),
            BleuSmoothing::AddOne => (matched[n], attempted[n]),
        };
        if m == 0 || t == 0 {
            return 0.0;
        }
        log_sum += (m as f64 / t as f64).ln();
    }
    let brevity = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    100.0 * brevity * (log_sum / MAX_N as f64).exp()
}

fn bleu_tokens(text: &str, tokenization: BleuTokenization) -> Vec<String> {
    match tokenization {
        BleuTokenization::Word => text.split_whitespace().map(str::to_string).collect(),
        BleuTokenization::Char => text
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| c.to_string())
            .collect(),
    }
}

fn clipped_ngram_matches(reference: &[String], hypothesis: &[String], n: usize) -> (u64, u64) {
    use std::collections::HashMap;
    if hypothesis.len() < n {
        return (0, 0);
    }
    let mut ref_counts: HashMap<&[String], u64> = HashMap::new();
    if reference.len() >= n {
        for gram in reference.windows(n) {
            *ref_counts.entry(gram).or_insert(0) += 1;
        }
    }
    let mut hyp_counts: HashMap<&[String], u64> = HashMap::new();
    for gram in hypothesis.windows(n) {
        *hyp_counts.entry(gram).or_insert(0) += 1;
    }
    let attempted = (hypothesis.len() - n + 1) as u64;
    let matched = hyp_counts
        .iter()
        .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    (matched, attempted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_basic_rules() {
        assert_eq!(normalize("Hello, World!", NormalizeProfile::English), "hello world");
        assert_eq!(normalize("也 不 需 要", NormalizeProfile::Mandarin), "也不需要");
        assert_eq!(normalize("don't stop", NormalizeProfile::English), "don't stop");
        assert_eq!(normalize("也 不 需 要 做 research", NormalizeProfile::Mixed), "也不需要做 research");
        assert_eq!(normalize("  a   b  ", NormalizeProfile::English), "a b");
        assert_eq!(normalize("你好。世界", NormalizeProfile::Mixed), "你好世界");
    }

    #[test]
    fn mixed_tokenize_appendix_style() {
        let toks = mixed_tokenize("也不需要做research");
        assert_eq!(toks.len(), 6);
        assert_eq!(toks.tokens[0].surface, "也");
        assert_eq!(toks.tokens[0].kind, TokenKind::CjkChar);
        assert_eq!(toks.tokens[5].surface, "research");
        assert_eq!(toks.tokens[5].kind, TokenKind::Word);
    }

    #[test]
    fn mixed_tokenize_words_and_empty() {
        assert_eq!(mixed_tokenize("hello world").len(), 2);
        assert_eq!(mixed_tokenize("").len(), 0);
    }

    #[test]
    fn edit_stats_identical_and_kitten() {
        let toks = mixed_tokenize("也不需要做research");
        let same = edit_stats(&toks.tokens, &toks.tokens);
        assert_eq!(same.total_errors(), 0);

        let kitten: Vec<char> = "kitten".chars().collect();
        let sitting: Vec<char> = "sitting".chars().collect();
        let stats = edit_stats(&kitten, &sitting);
        assert_eq!(stats.total_errors(), 3);
        assert_eq!(stats.ref_len, 6);
    }

    #[test]
    fn appendix_pair_scores_one_third() {
        let r = mixed_tokenize(&normalize("也 不 需 要 做 research", NormalizeProfile::Mixed));
        let h = mixed_tokenize(&normalize("也 不 需 要 做 研 究", NormalizeProfile::Mixed));
        let stats = edit_stats(&r.tokens, &h.tokens);
        assert_eq!(stats.total_errors(), 2);
        assert_eq!(stats.ref_len, 6);
        let rate = stats.error_rate().unwrap() * 100.0;
        assert!((rate - 33.33).abs() < 0.01);
    }

    #[test]
    fn classification_rules() {
        let m = |s: &str| classify(&mixed_tokenize(&normalize(s, NormalizeProfile::Mixed)));
        assert_eq!(m("你真的是要睡觉了是吗"), UtteranceClass::Mandarin);
        assert_eq!(m("then did you realise"), UtteranceClass::English);
        assert_eq!(m("也不需要做 research"), UtteranceClass::CodeSwitched);
    }

    #[test]
    fn score_corpus_identical_pairs_zero() {
        let pairs = vec![
            EvalPair::from(("你好世界", "你好世界")),
            EvalPair::from(("hello world", "hello world")),
            EvalPair::from(("也不需要做 research", "也不需要做 research")),
        ];
        let report = score_corpus(&pairs, ScoreTask::CsAsr).unwrap();
        assert_eq!(report.zh_cer, Some(0.0));
        assert_eq!(report.en_wer, Some(0.0));
        assert_eq!(report.cs_mer, Some(0.0));
        assert_eq!(report.total_mer, Some(0.0));
        assert_eq!(report.corpus_bleu, None);
    }

    #[test]
    fn score_corpus_singleton_appendix_row() {
        let pairs = vec![EvalPair::from(("也 不 需 要 做 research", "也 不 需 要 做 研 究"))];
        let report = score_corpus(&pairs, ScoreTask::CsAsr).unwrap();
        let cs = report.cs_mer.unwrap();
        let total = report.total_mer.unwrap();
        assert!((cs - 33.33).abs() < 0.01);
        assert!((total - 33.33).abs() < 0.01);
        assert_eq!(report.zh_cer, None);
        assert_eq!(report.en_wer, None);
    }

    #[test]
    fn score_corpus_classes_partition() {
        let pairs = vec![
            EvalPair::from(("你好", "你好")),
            EvalPair::from(("hello there", "hello there")),
        ];
        let report = score_corpus(&pairs, ScoreTask::CsAsr).unwrap();
        assert!(report.zh_cer.is_some());
        assert!(report.en_wer.is_some());
        assert!(report.cs_mer.is_none());
    }

    #[test]
    fn total_mer_pools_rather_than_averages() {
        // utterance 1: 1 error / 1 token (100%), utterance 2: 1 error / 9 tokens
        // pooled: 2/10 = 20%; mean of rates would be ~55.6%
        let pairs = vec![
            EvalPair::from(("a", "b")),
            EvalPair::from(("c d e f g h i j k", "c d e f g h i j x")),
        ];
        let report = score_corpus(&pairs, ScoreTask::Asr).unwrap();
        let total = report.total_mer.unwrap();
        assert!((total - 20.0).abs() < 1e-9);
    }

    #[test]
    fn bleu_identity_is_100() {
        let pairs = vec![
            EvalPair::from(("the cat sat on the mat", "the cat sat on the mat")),
            EvalPair::from(("a stitch in time saves nine", "a stitch in time saves nine")),
        ];
        assert_eq!(corpus_bleu(&pairs, BleuTokenization::Word), 100.0);
    }

    #[test]
    fn bleu_disjoint_is_zero() {
        let pairs = vec![EvalPair::from(("aa bb cc dd", "ee ff gg hh"))];
        assert_eq!(corpus_bleu(&pairs, BleuTokenization::Word), 0.0);
    }

    #[test]
    fn bleu_short_hypothesis_undefined_precision_zero() {
        // p1 = 1, p2 = 1, p3 undefined (no trigrams) -> 0 without smoothing
        let pairs = vec![EvalPair::from(("the cat sat", "the cat"))];
        assert_eq!(corpus_bleu(&pairs, BleuTokenization::Word), 0.0);
        // smoothing makes it positive
        let smoothed = corpus_bleu_with(&pairs, BleuTokenization::Word, BleuSmoothing::AddOne);
        assert!(smoothed > 0.0);
    }

    #[test]
    fn bleu_order_invariant() {
        let a = EvalPair::from(("the cat sat on the mat", "the cat sat on a mat"));
        let b = EvalPair::from(("it was the best of times", "it was the worst of times"));
        let c = EvalPair::from(("speech is silver", "speech is golden silver"));
        let fwd = corpus_bleu(&[a.clone(), b.clone(), c.clone()], BleuTokenization::Word);
        let rev = corpus_bleu(&[c, b, a], BleuTokenization::Word);
        assert_eq!(fwd, rev);
    }

    #[test]
    fn bleu_empty_hypotheses_zero() {
        let pairs = vec![EvalPair::from(("the cat", ""))];
        assert_eq!(corpus_bleu(&pairs, BleuTokenization::Word), 0.0);
    }
}
