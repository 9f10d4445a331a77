//! Grammar round-trip and golden prompt shapes against the fixture vocab.

mod common;

use common::load_fixture_vocab;
use prompteer::builder::{
    build_cs_prompt, build_default_prompt, build_st_prompt, build_visual_prompt, ConcatConfig,
    VisualPromptConfig,
};
use prompteer::decode::LidResult;
use prompteer::prompt::{display_form, parse_prompt, serialize_prompt, PromptSequence, Task};
use prompteer::vocab::TokenId;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[test]
fn fixture_vocab_declares_99_languages() {
    let v = load_fixture_vocab();
    assert_eq!(v.languages.len(), 99);
    assert_eq!(v.specials.languages.len(), 99);
    for code in ["en", "zh", "ru", "de", "fr", "ca", "ar", "su"] {
        assert!(v.languages.get(code).is_some(), "missing {code}");
    }
}

#[test]
fn fixture_vocab_golden_ids_are_stable() {
    // pinned against the checked-in manifest; tests depending on specific
    // token ids break loudly if the fixture is regenerated differently
    let v = load_fixture_vocab();
    assert_eq!(v.tokenizer.vocab_size(), 714);
    assert_eq!(v.specials.sop, TokenId(609));
    assert_eq!(v.specials.sot, TokenId(610));
    assert_eq!(v.specials.eot, TokenId(611));
    assert_eq!(v.specials.asr, TokenId(612));
    assert_eq!(v.specials.st, TokenId(613));
    assert_eq!(v.specials.no_timestamps, TokenId(614));
    assert_eq!(v.languages.get("en").unwrap().token(), TokenId(615));
    assert_eq!(v.languages.get("zh").unwrap().token(), TokenId(616));
    // byte tokens occupy ids 0..=255
    assert_eq!(v.tokenizer.token_bytes(TokenId(b'a' as u32)), Some(&b"a"[..]));
}

#[test]
fn table_prompt_shapes_under_fixture_vocab() {
    let v = load_fixture_vocab();

    let concat_cfg = ConcatConfig::new(
        v.languages.get("zh").unwrap().clone(),
        v.languages.get("en").unwrap().clone(),
        1.0,
    )
    .unwrap();
    let lid = LidResult {
        probs: vec![
            (v.languages.get("zh").unwrap().clone(), 0.6),
            (v.languages.get("en").unwrap().clone(), 0.4),
        ],
        argmax: v.languages.get("zh").unwrap().clone(),
        confidence: 0.6,
    };
    let concat = build_cs_prompt(&lid, &concat_cfg, &v.specials).unwrap();
    assert_eq!(
        display_form(&concat, &v.specials, &v.tokenizer).unwrap(),
        "<|sot|><|zh|><|en|><|asr|>"
    );

    let st = build_st_prompt("ru", &v.languages, &v.specials).unwrap();
    assert_eq!(
        display_form(&st, &v.specials, &v.tokenizer).unwrap(),
        "<|sot|><|ru|><|asr|>"
    );

    let default_st = build_default_prompt("ru", Task::St, &v.languages, &v.specials).unwrap();
    assert_eq!(
        display_form(&default_st, &v.specials, &v.tokenizer).unwrap(),
        "<|sot|><|ru|><|st|>"
    );

    let visual = build_visual_prompt(
        &["spinach", "olive oil", "bowl"],
        &VisualPromptConfig::new(2).unwrap(),
        "en",
        &v.tokenizer,
        &v.languages,
        &v.specials,
    )
    .unwrap();
    assert_eq!(
        display_form(&visual, &v.specials, &v.tokenizer).unwrap(),
        "<|sop|>spinach, olive oil<|sot|><|en|><|asr|>"
    );
}

fn random_prompt(rng: &mut StdRng, v: &prompteer::vocab::LoadedVocab) -> PromptSequence {
    let langs: Vec<_> = v.languages.iter().cloned().collect();
    let n_langs = rng.random_range(1..=2usize);
    let mut chosen = Vec::new();
    while chosen.len() < n_langs {
        let lang = langs[rng.random_range(0..langs.len())].clone();
        if !chosen.contains(&lang) {
            chosen.push(lang);
        }
    }
    let task = if rng.random_bool(0.5) { Task::Asr } else { Task::St };
    let prev = if rng.random_bool(0.5) {
        // non-special text token ids only
        let len = rng.random_range(1..=40usize);
        Some(
            (0..len)
                .map(|_| {
                    loop {
                        let id = TokenId(rng.random_range(0..v.tokenizer.vocab_size() as u32));
                        if !v.tokenizer.is_special(id) && v.tokenizer.token_bytes(id).is_some() {
                            return id;
                        }
                    }
                })
                .collect(),
        )
    } else {
        None
    };
    PromptSequence::new(prev, chosen, task, &v.specials).unwrap()
}

#[test]
fn randomized_round_trip_and_injectivity() {
    let v = load_fixture_vocab();
    let mut rng = StdRng::seed_from_u64(7);
    let mut seen: std::collections::HashMap<Vec<TokenId>, PromptSequence> =
        std::collections::HashMap::new();
    for _ in 0..2_000 {
        let p = random_prompt(&mut rng, &v);
        let tokens = serialize_prompt(&p, &v.specials).unwrap();
        let q = parse_prompt(&tokens, &v.specials).unwrap();
        assert_eq!(p, q, "round trip failed");
        if let Some(prev) = seen.get(&tokens) {
            assert_eq!(prev, &p, "two distinct prompts share a serialization");
        } else {
            seen.insert(tokens, p);
        }
    }
}

#[test]
fn tokenizer_round_trip_on_fixture_text() {
    let v = load_fixture_vocab();
    for text in [
        "spinach, olive oil",
        "也 不 需 要 做 research",
        "привет мир",
        "مرحبا",
        "mixed 混合 text с кириллицей",
    ] {
        let toks = v.tokenizer.encode(text).unwrap();
        assert_eq!(v.tokenizer.decode(&toks), text);
        for t in toks {
            assert!(!v.tokenizer.is_special(t), "encode produced a special");
        }
    }
}

#[test]
fn parse_rejects_malformed_with_position() {
    let v = load_fixture_vocab();
    let sot = v.specials.sot;
    let asr = v.specials.asr;
    let en = v.languages.get("en").unwrap().token();
    let zh = v.languages.get("zh").unwrap().token();
    let ru = v.languages.get("ru").unwrap().token();

    // no language token
    let err = parse_prompt(&[sot, asr], &v.specials).unwrap_err();
    assert_eq!(err.position, 1);
    // three language tokens
    let err = parse_prompt(&[sot, en, zh, ru, asr], &v.specials).unwrap_err();
    assert_eq!(err.position, 3);
    // trailing garbage
    let err =
        parse_prompt(&[sot, en, asr, v.specials.no_timestamps, TokenId(0)], &v.specials)
            .unwrap_err();
    assert_eq!(err.position, 4);
}
