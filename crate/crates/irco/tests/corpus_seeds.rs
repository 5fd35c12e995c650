//! The fuzz corpus seeds must stay valid inputs for their decoders; a seed
//! that stops parsing silently degrades fuzzing coverage.

use std::fs;
use std::path::PathBuf;

use irco::data::{load_csv_reader, load_libsvm_reader};
use irco::harness::ExperimentConfig;
use irco::model::ModelParams;

fn corpus_dir(target: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target)
}

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = corpus_dir(target);
    let mut out: Vec<(PathBuf, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("corpus dir {dir:?}: {e}"))
        .map(|entry| {
            let path = entry.unwrap().path();
            let bytes = fs::read(&path).unwrap();
            (path, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "corpus {target:?} has no seeds");
    out
}

#[test]
fn csv_seeds_load() {
    for (path, bytes) in seeds("csv_dataset") {
        let ds = load_csv_reader(bytes.as_slice())
            .unwrap_or_else(|e| panic!("seed {path:?}: {e}"));
        assert!(!ds.is_empty(), "seed {path:?} loaded empty");
    }
}

#[test]
fn libsvm_seeds_load() {
    for (path, bytes) in seeds("libsvm_dataset") {
        let ds = load_libsvm_reader(bytes.as_slice())
            .unwrap_or_else(|e| panic!("seed {path:?}: {e}"));
        assert!(!ds.is_empty(), "seed {path:?} loaded empty");
    }
}

#[test]
fn experiment_config_seeds_parse_and_validate() {
    for (path, bytes) in seeds("experiment_config") {
        let text = std::str::from_utf8(&bytes).unwrap();
        ExperimentConfig::from_json_str(text)
            .unwrap_or_else(|e| panic!("seed {path:?}: {e}"));
    }
}

#[test]
fn model_checkpoint_seeds_parse_and_validate() {
    for (path, bytes) in seeds("model_checkpoint") {
        let text = std::str::from_utf8(&bytes).unwrap();
        let params = ModelParams::from_json_str(text)
            .unwrap_or_else(|e| panic!("seed {path:?}: {e}"));
        assert_eq!(params.theta.len(), params.arch.param_count());
    }
}
