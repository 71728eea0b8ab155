//! Golden examples for the on-disk formats. Set `MAS_BUDGET_BLESS=1` to
//! regenerate the catalog and pool files after an intended change.

use std::path::PathBuf;

use mas_budget::catalog::{build_pool_set, qwen_mmlu_catalog, Catalog, PoolSet, PoolingOptions};
use mas_budget::embedding::{text_key, EmbeddingStore, Provenance};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn check_golden(name: &str, text: &str) {
    let path = fixture(name);
    if std::env::var_os("MAS_BUDGET_BLESS").is_some() {
        std::fs::write(&path, text).unwrap();
    }
    let golden = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, golden, "{name} drifted from its golden copy");
}

#[test]
fn catalog_golden() {
    let catalog = qwen_mmlu_catalog().unwrap();
    check_golden("catalog_golden.json", &catalog.to_json());
    let back = Catalog::load(&fixture("catalog_golden.json")).unwrap();
    assert_eq!(back, catalog);
    assert_eq!(back.to_json(), catalog.to_json());
}

#[test]
fn pools_golden() {
    let catalog = qwen_mmlu_catalog().unwrap();
    let set = build_pool_set(&catalog, PoolingOptions::default()).unwrap();
    check_golden("pools_golden.json", &set.to_json());
    let back = PoolSet::load(&fixture("pools_golden.json")).unwrap();
    assert_eq!(back, set);
}

#[test]
fn embeddings_file_reserializes_exactly() {
    let path = fixture("embeddings_golden.jsonl");
    let golden = std::fs::read_to_string(&path).unwrap();
    let (store, warnings) = EmbeddingStore::load(&path).unwrap();
    assert!(warnings.is_empty());
    assert_eq!(store.dim(), 3);
    assert_eq!(store.len(), 2);
    assert_eq!(store.provenance(), Provenance::Precomputed);
    let mut out = Vec::new();
    store.write(&mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), golden);
}

#[test]
fn embeddings_golden_values_are_served() {
    let (store, _) = EmbeddingStore::load(&fixture("embeddings_golden.jsonl")).unwrap();
    // SHA-256("abc") is the first record's key
    assert_eq!(text_key("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    let e = store.encode_text("abc").unwrap();
    assert_eq!(e.values(), [0.1, -0.25, 1e-7]);
    // a miss falls back to the hash encoder at the file's dimension
    let miss = store.encode_text("not in the file").unwrap();
    assert_eq!(miss.dim(), 3);
    assert!((miss.norm() - 1.0).abs() < 1e-9);
}

#[test]
fn precomputed_profiles_round_trip_through_a_file() {
    let catalog = qwen_mmlu_catalog().unwrap();
    let mut store = EmbeddingStore::fallback(4);
    let mut k = 0.0;
    for b in &catalog.backbones {
        for text in [&b.perf_profile, &b.ptp_profile, &b.type_profile] {
            k += 1.0;
            store.insert_text(text, vec![k, -k / 7.0, 1.0 / k, 0.0]).unwrap();
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("emb.jsonl");
    store.save(&p).unwrap();
    let (back, warnings) = EmbeddingStore::load(&p).unwrap();
    assert!(warnings.is_empty());
    for b in &catalog.backbones {
        let got = back.profile_embeddings(b).unwrap();
        let want = store.profile_embeddings(b).unwrap();
        for (g, w) in [(got.0, want.0), (got.1, want.1), (got.2, want.2)] {
            let bits = |e: &mas_budget::embedding::Embedding| e.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&g), bits(&w));
        }
    }
}
