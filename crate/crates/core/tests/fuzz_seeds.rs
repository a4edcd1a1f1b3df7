//! Replays the checked-in fuzz corpora through the parser entry points.

use std::path::PathBuf;

use msrb::cache::{decode_reduced, decode_snapshots};
use msrb::config::Config;
use msrb::sampling::parse_generating_vector;

fn corpus(name: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(name);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "empty corpus {name}");
    out
}

#[test]
fn config_seeds() {
    let mut ok = 0;
    for (name, bytes) in corpus("config") {
        let Ok(text) = std::str::from_utf8(&bytes) else { continue };
        match Config::from_toml(text) {
            Ok(cfg) => {
                let again = Config::from_toml(&cfg.canonical()).unwrap();
                assert_eq!(again.content_hash(), cfg.content_hash(), "{name}");
                ok += 1;
            }
            Err(e) => assert!(!e.to_string().is_empty(), "{name}"),
        }
    }
    assert!(ok >= 1);
}

#[test]
fn generating_vector_seeds() {
    let results: Vec<_> = corpus("generating_vector")
        .into_iter()
        .map(|(name, b)| (name, parse_generating_vector(&String::from_utf8_lossy(&b))))
        .collect();
    for (name, r) in &results {
        assert_eq!(r.is_ok(), name == "valid.txt", "{name}: {r:?}");
    }
}

#[test]
fn cache_seeds() {
    for (name, bytes) in corpus("cache_decode") {
        let snaps = decode_snapshots(&bytes);
        let reduced = decode_reduced(&bytes);
        match name.as_str() {
            "snapshots.bin" => {
                assert!(snaps.is_ok() && reduced.is_err());
            }
            "reduced.bin" => {
                assert!(reduced.is_ok() && snaps.is_err());
            }
            _ => assert!(snaps.is_err() && reduced.is_err(), "{name}"),
        }
    }
}
