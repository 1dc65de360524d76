use std::collections::HashMap;

use admnmt::corpus::{make_synthetic_task, ParallelCorpus, SyntheticKind, Vocabulary, EOS, UNK};
use admnmt::rng::seeded;
use rand::Rng;

/// Zipf-ish lines over 300 types so truncation and rare tokens both occur.
fn thousand_lines() -> Vec<String> {
    let mut rng = seeded(77);
    (0..1000)
        .map(|_| {
            let len = rng.random_range(1..15);
            (0..len)
                .map(|_| {
                    let r: f64 = rng.random();
                    format!("t{}", (300.0 * r * r * r) as usize)
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

#[test]
fn counts_match_a_single_pass_counter() {
    let lines = thousand_lines();
    let mut counter: HashMap<&str, u64> = HashMap::new();
    for line in &lines {
        for tok in line.split_whitespace() {
            *counter.entry(tok).or_default() += 1;
        }
    }
    let vocab = Vocabulary::build(&lines, 100_000, 1).unwrap();
    assert_eq!(vocab.len(), counter.len() + 4);
    for (tok, &n) in &counter {
        assert_eq!(vocab.count(vocab.index_of(tok)), n, "{tok}");
    }
    assert_eq!(vocab.count(UNK), 0);

    // Truncation folds the tail into the unknown count.
    let small = Vocabulary::build(&lines, 54, 1).unwrap();
    assert_eq!(small.len(), 54);
    let kept: u64 = (4..54).map(|i| small.count(i)).sum();
    let total: u64 = counter.values().sum();
    assert_eq!(kept + small.count(UNK), total);
    let mut by_count: Vec<u64> = counter.values().copied().collect();
    by_count.sort_unstable_by(|a, b| b.cmp(a));
    let expected_kept: u64 = by_count[..50].iter().sum();
    assert_eq!(kept, expected_kept);
}

#[test]
fn vocabulary_and_corpus_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let task = make_synthetic_task(SyntheticKind::Reverse, 12, (2, 6), 50, 5).unwrap();
    let (src, tgt) = (dir.path().join("a.src"), dir.path().join("a.tgt"));
    task.corpus.save(&src, &tgt).unwrap();
    let loaded = ParallelCorpus::load(&src, &tgt).unwrap();
    assert_eq!(loaded.pairs, task.corpus.pairs);

    let vocab = Vocabulary::build(&loaded.source_lines(), 100, 1).unwrap();
    let path = dir.path().join("v.txt");
    vocab.save(&path).unwrap();
    let back = Vocabulary::load(&path).unwrap();
    assert_eq!(back.tokens(), vocab.tokens());
    for line in loaded.source_lines() {
        let ids = back.encode_sentence(&line);
        assert_eq!(*ids.last().unwrap(), EOS);
        assert_eq!(back.decode_line(&ids), line);
    }
}
