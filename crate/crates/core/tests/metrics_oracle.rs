//! Edit-distance against an exhaustive alignment search, plus corpus
//! scoring identities.

use prompteer::metrics::{
    corpus_bleu, edit_stats, score_corpus, BleuTokenization, EvalPair, ScoreTask,
};

/// Memoized top-down alignment cost; independent of the bottom-up DP and
/// backtrace in the implementation.
fn oracle_cost(reference: &[u8], hypothesis: &[u8]) -> usize {
    fn go(
        r: &[u8],
        h: &[u8],
        i: usize,
        j: usize,
        memo: &mut std::collections::HashMap<(usize, usize), usize>,
    ) -> usize {
        if i == r.len() {
            return h.len() - j;
        }
        if j == h.len() {
            return r.len() - i;
        }
        if let Some(&c) = memo.get(&(i, j)) {
            return c;
        }
        let sub = go(r, h, i + 1, j + 1, memo) + usize::from(r[i] != h[j]);
        let del = go(r, h, i + 1, j, memo) + 1;
        let ins = go(r, h, i, j + 1, memo) + 1;
        let best = sub.min(del).min(ins);
        memo.insert((i, j), best);
        best
    }
    go(reference, hypothesis, 0, 0, &mut std::collections::HashMap::new())
}

fn sequences(max_len: usize, alphabet: &[u8]) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut layer = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &layer {
            for &a in alphabet {
                let mut t = s.clone();
                t.push(a);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

#[test]
fn edit_stats_matches_exhaustive_search_small() {
    // lengths <= 4 here; the acceptance suite runs the full <= 6 sweep
    let seqs = sequences(4, &[0, 1, 2]);
    for r in &seqs {
        for h in &seqs {
            let stats = edit_stats(r, h);
            let want = oracle_cost(r, h);
            assert_eq!(
                stats.total_errors(),
                want,
                "ref {r:?} hyp {h:?}: S{} D{} I{}",
                stats.substitutions,
                stats.deletions,
                stats.insertions
            );
            assert_eq!(stats.ref_len, r.len());
        }
    }
}

#[test]
fn error_bound_and_disjoint_sequences() {
    let seqs = sequences(4, &[0, 1, 2]);
    for r in &seqs {
        for h in &seqs {
            let stats = edit_stats(r, h);
            assert!(stats.total_errors() <= r.len().max(h.len()));
        }
    }
    // disjoint equal-length sequences: rate exactly 100%
    let r = [0u8, 0, 0, 0];
    let h = [1u8, 1, 1, 1];
    let stats = edit_stats(&r, &h);
    assert_eq!(stats.error_rate(), Some(1.0));
}

#[test]
fn backtrace_decomposition_sums_to_distance() {
    let seqs = sequences(4, &[0, 1]);
    for r in &seqs {
        for h in &seqs {
            let stats = edit_stats(r, h);
            assert_eq!(
                stats.substitutions + stats.deletions + stats.insertions,
                oracle_cost(r, h)
            );
        }
    }
}

#[test]
fn pooled_total_differs_from_mean_of_rates() {
    // one short bad utterance, one long good one
    let pairs = vec![
        EvalPair::from(("你", "好")),                     // 1/1
        EvalPair::from(("你好你好你好你好你", "你好你好你好你好你")), // 0/9
    ];
    let report = score_corpus(&pairs, ScoreTask::CsAsr).unwrap();
    let pooled = report.total_mer.unwrap();
    assert!((pooled - 10.0).abs() < 1e-9, "pooled {pooled}");
    let mean_of_rates: f64 = report
        .utterances
        .iter()
        .map(|u| u.rate.unwrap())
        .sum::<f64>()
        / 2.0;
    assert!((mean_of_rates - 50.0).abs() < 1e-9);
    assert!((pooled - mean_of_rates).abs() > 1.0);
}

#[test]
fn bleu_brevity_penalty_applies() {
    // perfect 4-gram precision but hypothesis shorter than reference
    let pairs = vec![EvalPair::from(("a b c d e f", "a b c d"))];
    let bleu = corpus_bleu(&pairs, BleuTokenization::Word);
    // p_n = 1 for all n, BP = exp(1 - 6/4)
    let expected = 100.0 * (1.0f64 - 6.0 / 4.0).exp();
    assert!((bleu - expected).abs() < 1e-9, "{bleu} vs {expected}");
}

#[test]
fn char_bleu_for_cjk_targets() {
    let pairs = vec![EvalPair::from(("你好世界真好", "你好世界真好"))];
    let report = score_corpus(&pairs, ScoreTask::St).unwrap();
    assert_eq!(report.corpus_bleu, Some(100.0));
}

#[test]
fn identical_corpus_bleu_is_exactly_100() {
    let pairs = vec![
        EvalPair::from(("the quick brown fox jumps", "the quick brown fox jumps")),
        EvalPair::from(("pack my box with five dozen jugs", "pack my box with five dozen jugs")),
    ];
    assert_eq!(corpus_bleu(&pairs, BleuTokenization::Word), 100.0);
}
