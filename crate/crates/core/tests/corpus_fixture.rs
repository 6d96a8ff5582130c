use std::collections::HashMap;
use std::path::PathBuf;

use dualcal::corpus::{ingest_corpus, CorpusFormat};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Audited labels: article id -> (locality, topics).
fn manifest() -> HashMap<String, (String, Vec<String>)> {
    let mut rdr = csv::Reader::from_path(fixture("corpus50_labels.csv")).unwrap();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            let topics = r[2].split(';').filter(|s| !s.is_empty()).map(str::to_string).collect();
            (r[0].to_string(), (r[1].to_string(), topics))
        })
        .collect()
}

#[test]
fn labels_match_audited_manifest() {
    let (corpus, report) = ingest_corpus(&fixture("corpus50.jsonl"), CorpusFormat::Ndjson).unwrap();
    assert_eq!(report.accepted, 50);
    assert!(report.quarantined.is_empty());
    let expected = manifest();
    assert_eq!(expected.len(), 50);
    for a in corpus.articles() {
        let (loc, topics) = &expected[&a.article_id];
        let l = a.locality();
        let got_loc = match (l.is_domestic(), l.is_world()) {
            (true, true) => "Domestic+World",
            (true, false) => "Domestic",
            (false, true) => "World",
            (false, false) => "Neither",
        };
        assert_eq!(got_loc, loc, "{}", a.article_id);
        let got_topics: Vec<String> = a.topics().iter().map(|t| t.to_string()).collect();
        assert_eq!(&got_topics, topics, "{}", a.article_id);
    }
}

#[test]
fn summary_counts_agree_with_manifest() {
    let (corpus, _) = ingest_corpus(&fixture("corpus50.jsonl"), CorpusFormat::Ndjson).unwrap();
    let summary = corpus.summary();
    let mut by_loc: HashMap<String, usize> = HashMap::new();
    for (loc, _) in manifest().values() {
        *by_loc.entry(loc.clone()).or_default() += 1;
    }
    for (loc, n) in by_loc {
        assert_eq!(summary.locality.get(&loc).copied().unwrap_or(0), n, "{loc}");
    }
    assert_eq!(summary.articles, 50);
}
