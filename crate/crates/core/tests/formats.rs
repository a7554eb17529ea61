use std::fs;
use std::path::PathBuf;

use phi_core::pipeline::{Checkpoint, Model, TrainConfig};
use phi_core::synthdata::{decode_phif, encode_phif, DatasetManifest};

fn corpus(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut files: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "no seeds in {}", dir.display());
    files.into_iter().map(|p| (p.clone(), fs::read(p).unwrap())).collect()
}

#[test]
fn phif_seeds_decode_and_re_encode_byte_for_byte() {
    for (path, bytes) in corpus("phif") {
        let (samples, m, d) = decode_phif(&bytes).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(encode_phif(&samples, m, d).unwrap(), bytes, "{}", path.display());
    }
}

#[test]
fn manifest_seeds_print_back_to_themselves() {
    for (path, bytes) in corpus("manifest") {
        let text = String::from_utf8(bytes).unwrap();
        let m = DatasetManifest::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(DatasetManifest::parse(&m.to_text()).unwrap(), m);
    }
}

#[test]
fn checkpoint_seeds_load_as_models() {
    for (path, bytes) in corpus("checkpoint") {
        let c = Checkpoint::decode(&bytes).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(c.encode().unwrap(), bytes);
        let model = Model::from_checkpoint(&c, None, false).unwrap();
        assert_eq!(model.to_checkpoint().encode().unwrap(), bytes);
    }
}

#[test]
fn config_seeds_parse_and_print_stably() {
    for (path, bytes) in corpus("config") {
        let text = String::from_utf8(bytes).unwrap();
        let cfg = TrainConfig::from_text(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let printed = cfg.to_text();
        assert_eq!(TrainConfig::from_text(&printed).unwrap().to_text(), printed);
    }
}

#[test]
fn every_strict_prefix_of_a_checkpoint_is_rejected() {
    let (_, bytes) = corpus("checkpoint").remove(0);
    for cut in 0..bytes.len() {
        assert!(Checkpoint::decode(&bytes[..cut]).is_err(), "prefix of {cut} bytes decoded");
    }
}

#[test]
fn every_strict_prefix_of_a_phif_file_is_rejected() {
    let (_, bytes) = corpus("phif").remove(0);
    for cut in 0..bytes.len() {
        assert!(decode_phif(&bytes[..cut]).is_err(), "prefix of {cut} bytes decoded");
    }
}
