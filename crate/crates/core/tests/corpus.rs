//! The fuzz seed corpus doubles as a set of decoder regression inputs.

use std::path::{Path, PathBuf};

use flowselect::config::RunConfig;
use flowselect::container::Container;
use flowselect::data::read_response_csv_from;
use flowselect::models::Model;
use flowselect::sampler::NullSamples;
use flowselect::{FeatureMatrix, FlowModel};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty());
    out
}

#[test]
fn binary_seeds_decode() {
    for (p, b) in seeds("container_decode") {
        let c = Container::decode(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(c.encode(), b);
    }
    for (_, b) in seeds("flow_checkpoint") {
        let m = FlowModel::from_bytes(&b).unwrap();
        assert!(m.log_density(&vec![0.0; m.dim()]).unwrap().is_finite());
    }
    for (_, b) in seeds("null_cache") {
        assert_eq!(NullSamples::from_bytes(&b).unwrap().to_bytes(), b);
    }
    for (_, b) in seeds("model_container") {
        assert_eq!(Model::from_bytes(&b).unwrap().to_bytes(), b);
    }
}

#[test]
fn text_seeds_parse() {
    for (p, b) in seeds("features_csv") {
        let r = FeatureMatrix::read_csv_from(&b[..], &p);
        let bad = p.file_name().unwrap().to_str().unwrap().starts_with("bad");
        assert_eq!(r.is_err(), bad, "{}", p.display());
    }
    for (p, b) in seeds("response_csv") {
        read_response_csv_from(&b[..], &p).unwrap();
    }
    for (_, b) in seeds("run_config") {
        let c = RunConfig::from_toml(std::str::from_utf8(&b).unwrap()).unwrap();
        c.validate().unwrap();
    }
}
