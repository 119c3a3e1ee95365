//! Replays the checked-in fuzz corpus through the parser entry points.

use std::fs;
use std::path::PathBuf;

use knightian_lq::config::parse_config_bytes;
use knightian_lq::volatility::parse_samples_bytes;

fn corpus(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "empty corpus for {target}");
    out
}

#[test]
fn sample_corpus_parses() {
    for (path, bytes) in corpus("parse_samples") {
        let v = parse_samples_bytes(&bytes).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(!v.is_empty());
        assert!(v.iter().all(|x| x.is_finite()));
    }
}

#[test]
fn config_corpus_does_not_panic() {
    let mut accepted = 0;
    for (_, bytes) in corpus("parse_config") {
        if let Ok(cfg) = parse_config_bytes(&bytes) {
            accepted += 1;
            assert!(cfg.model().is_ok());
        }
    }
    assert!(accepted >= 4);
}

#[test]
fn garbage_is_rejected_not_panicking() {
    let inputs: [&[u8]; 6] = [
        b"",
        b"\xff\xfe",
        b"nan\n",
        b"1e999\n",
        b"[model",
        b"[model]\nA = 1\n[model]\n",
    ];
    for input in inputs {
        let _ = parse_samples_bytes(input);
        assert!(parse_config_bytes(input).is_err());
    }
}
