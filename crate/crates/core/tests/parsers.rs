//! Every decoder must return an error, never panic, on arbitrary input.

use proptest::prelude::*;
use rrl_core::{checkpoint, image::Image, labelmap::LabelMap, retrieval::DescriptorStore};

proptest! {
    #[test]
    fn text_parsers_never_panic(s in "(LMAP v1|IMG v1|DESC v1)?[ 0-9.\\-eE\\n\\tabc:]{0,80}") {
        let _ = s.parse::<LabelMap>();
        let _ = s.parse::<Image>();
        let _ = s.parse::<DescriptorStore>();
    }

    #[test]
    fn checkpoint_decoder_never_panics(mut bytes in proptest::collection::vec(any::<u8>(), 0..256), magic in any::<bool>()) {
        if magic && bytes.len() >= 8 {
            bytes[..4].copy_from_slice(b"RRLM");
            bytes[4..8].copy_from_slice(&1u32.to_le_bytes());
        }
        let _ = checkpoint::decode(&bytes);
    }
}

fn corpus(target: &str) -> Vec<(std::path::PathBuf, Vec<u8>)> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    files.sort();
    assert!(!files.is_empty(), "no seeds in {}", dir.display());
    files
}

#[test]
fn fuzz_seeds_parse_and_round_trip() {
    for (p, b) in corpus("lmap") {
        let m: LabelMap = std::str::from_utf8(&b).unwrap().parse().unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(m, m.to_string().parse().unwrap());
    }
    for (p, b) in corpus("img") {
        let i: Image = std::str::from_utf8(&b).unwrap().parse().unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(i, i.to_string().parse().unwrap());
    }
    for (p, b) in corpus("desc") {
        let s: DescriptorStore =
            std::str::from_utf8(&b).unwrap().parse().unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(s.to_string(), s.to_string().parse::<DescriptorStore>().unwrap().to_string());
    }
    for (p, b) in corpus("rrlm") {
        let (cfg, params) = checkpoint::decode(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(checkpoint::encode(&cfg, &params).unwrap(), b);
    }
}
