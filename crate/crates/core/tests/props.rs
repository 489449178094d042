//! Property tests for the metric, encoder, persistence, and scoring
//! invariants.

use indexmap::IndexMap;
use proptest::prelude::*;

use rebase_core::datastore::{build, persist, load, BuildOptions};
use rebase_core::diversity::{avg_unique_ngrams, rouge_l, tokenize, unique_percent};
use rebase_core::encoder::hash::HashEncoder;
use rebase_core::encoder::Encoder;
use rebase_core::ingest::{load_local, save_local, DatasetMeta, RowRecord};
use rebase_core::retrieval::row_scores;

/// Independent full-matrix LCS, kept deliberately naive.
fn lcs_reference(a: &[String], b: &[String]) -> usize {
    let mut dp = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            dp[i][j] = if a[i - 1] == b[j - 1] {
                dp[i - 1][j - 1] + 1
            } else {
                dp[i - 1][j].max(dp[i][j - 1])
            };
        }
    }
    dp[a.len()][b.len()]
}

fn rouge_reference(a: &str, b: &str) -> f64 {
    let ta = tokenize(a);
    let tb = tokenize(b);
    if ta.is_empty() || tb.is_empty() {
        return 0.0;
    }
    let l = lcs_reference(&ta, &tb) as f64;
    let p = l / tb.len() as f64;
    let r = l / ta.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec![
        "the", "cat", "sat", "mat", "dog", "ran", "fast", "blue", "sky", "sun",
        "moon", "star", "code", "data", "row",
    ])
    .prop_map(str::to_string)
}

fn sentence(max_words: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(word(), 0..max_words).prop_map(|ws| ws.join(" "))
}

proptest! {
    #[test]
    fn rouge_matches_reference_dp(a in sentence(12), b in sentence(12)) {
        prop_assert_eq!(rouge_l(&a, &b), rouge_reference(&a, &b));
    }

    #[test]
    fn rouge_is_symmetric_and_bounded(a in sentence(12), b in sentence(12)) {
        let ab = rouge_l(&a, &b);
        let ba = rouge_l(&b, &a);
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn rouge_self_is_one_for_nonempty(a in sentence(12)) {
        prop_assume!(!tokenize(&a).is_empty());
        prop_assert_eq!(rouge_l(&a, &a), 1.0);
    }

    #[test]
    fn unique_percent_monotone_in_threshold(
        corpus in prop::collection::vec(sentence(8), 1..12),
        t1 in 0.0f64..1.0,
        t2 in 0.0f64..1.0,
    ) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(unique_percent(&corpus, lo) <= unique_percent(&corpus, hi));
    }

    #[test]
    fn identical_corpus_has_no_unique_ngrams(s in sentence(8), copies in 2usize..5) {
        let corpus = vec![s; copies];
        prop_assert_eq!(avg_unique_ngrams(&corpus, 1), 0.0);
        prop_assert_eq!(avg_unique_ngrams(&corpus, 2), 0.0);
    }

    #[test]
    fn batch_equals_elementwise(texts in prop::collection::vec(sentence(6), 0..20)) {
        let encoder = HashEncoder::new(32).unwrap();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let batch = encoder.embed_batch(&refs).unwrap();
        for (text, vector) in texts.iter().zip(&batch) {
            prop_assert_eq!(&encoder.embed_text(text).unwrap(), vector);
        }
        prop_assert_eq!(batch.len(), texts.len());
    }

    #[test]
    fn chunked_batches_concatenate(texts in prop::collection::vec(sentence(6), 1..30), split in 1usize..10) {
        let encoder = HashEncoder::new(32).unwrap();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let whole = encoder.embed_batch(&refs).unwrap();
        let mut chunked = Vec::new();
        for chunk in refs.chunks(split) {
            chunked.extend(encoder.embed_batch(chunk).unwrap());
        }
        prop_assert_eq!(whole, chunked);
    }

    #[test]
    fn raising_one_cell_score_never_lowers_row_score(
        mut cells in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..8),
        idx in any::<prop::sample::Index>(),
        bump in 0.0f64..0.5,
    ) {
        let before = row_scores(&cells).unwrap();
        let i = idx.index(cells.len());
        cells[i].0 += bump;
        let after = row_scores(&cells).unwrap();
        prop_assert!(after.0 >= before.0);
        prop_assert_eq!(after.1, before.1);
    }
}

fn arb_row(dataset: String, config: String, row_num: u64) -> impl Strategy<Value = RowRecord> {
    prop::collection::vec((prop::sample::select(vec!["q", "a", "ctx", "label"]), sentence(6)), 1..4)
        .prop_map(move |cols| {
            let mut columns = IndexMap::new();
            for (name, value) in cols {
                columns.insert(name.to_string(), value);
            }
            RowRecord {
                dataset_id: dataset.clone(),
                config_name: config.clone(),
                row_num,
                columns,
            }
        })
}

fn arb_dataset(tag: usize) -> impl Strategy<Value = (DatasetMeta, Vec<RowRecord>)> {
    let dataset = format!("set{tag}");
    let config = if tag.is_multiple_of(2) { "main" } else { "" }.to_string();
    (sentence(6), 0usize..5).prop_flat_map(move |(description, n_rows)| {
        let dataset = dataset.clone();
        let config = config.clone();
        let rows: Vec<_> = (0..n_rows as u64)
            .map(|i| arb_row(dataset.clone(), config.clone(), i))
            .collect();
        let meta = DatasetMeta {
            dataset_id: dataset,
            config_name: config,
            description,
            row_count: n_rows as u64,
        };
        rows.prop_map(move |rows| (meta.clone(), rows))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn store_round_trips_bit_exactly(datasets in prop::collection::vec((0usize..4).prop_flat_map(arb_dataset), 1..4)) {
        // Distinct tags may collide; dedupe source pairs first.
        let mut seen = std::collections::BTreeSet::new();
        let datasets: Vec<_> = datasets
            .into_iter()
            .filter(|(m, _)| seen.insert((m.dataset_id.clone(), m.config_name.clone())))
            .collect();
        let encoder = HashEncoder::new(16).unwrap();
        let store = build(&datasets, &encoder, &BuildOptions::default()).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("store.bin");
        persist(&store, &path).unwrap();
        prop_assert_eq!(load(&path).unwrap(), store);
    }

    #[test]
    fn local_dataset_round_trips(dataset in arb_dataset(0), description in sentence(5)) {
        let (mut meta, rows) = dataset;
        meta.description = description;
        meta.row_count = rows.len() as u64;
        let tmp = tempfile::tempdir().unwrap();
        save_local(tmp.path(), &meta, &rows).unwrap();
        let out = load_local(tmp.path()).unwrap();
        prop_assert_eq!(out.meta, meta);
        prop_assert_eq!(out.rows, rows);
        prop_assert!(out.skipped.is_empty());
    }
}
